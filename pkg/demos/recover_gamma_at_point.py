"""Recover the conductivity at a boundary point from noisy pairings.

Runs the oscillating-probe estimator for gamma = 2 + x at P = (1, 0) on the
unit disk, one frozen noise realization, and prints the estimate, the clean
and noise parts, and the error against gamma(P) = 3 for growing N.

    python demos/recover_gamma_at_point.py [seed]
"""
import sys

from calderon import (CleanOracle, DomainGeometry, MeshPolicy, NoisyOracle, ProbeSpec, builtin_field,
                      build_chart, recover_gamma, sample_noise, select_xi)
from calderon.reconstruct import noise_truncation

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
disk = DomainGeometry.disk()
gamma = builtin_field("affine", {"a": 2.0, "b": [1.0, 0.0]})
chart = build_chart(disk, 0.0)
spec = ProbeSpec(chart, select_xi(chart, "ccw"), 0.5, "gamma")

Ns = [8, 16, 32, 64]
K = noise_truncation(spec, Ns[-1])
oracle = NoisyOracle(CleanOracle(disk, gamma, MeshPolicy()), sample_noise(seed, K))
trace = recover_gamma(oracle, spec, Ns, truth=3.0)

print(f"seed {seed}, K = {K}")
print(f"{'N':>5} {'estimate':>22} {'clean':>22} {'|noise|':>9} {'abs err':>9}")
for N, e, c, z, err in zip(trace.N, trace.estimate, trace.clean, trace.noise, trace.errors):
    print(f"{N:5.0f} {e.real:10.5f}{e.imag:+10.5f}i {c.real:10.5f}{c.imag:+10.5f}i {abs(z):9.2e} {err:9.2e}")
