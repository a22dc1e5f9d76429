"""Clean window averages of the derivative pairing for gamma = 2 + x.

Averages the probe pairing over t in [T, 2T] for a few windows and compares
with the two candidate limits (d_nu gamma + i tau . grad gamma)/gamma(P), once
with the outward and once with the inward normal.  Expect the averages to
settle near the inward-normal value, -1/3, up to a mesh-dependent floor.

    python demos/boundary_derivative.py
"""
from calderon import (CleanOracle, DomainGeometry, MeshPolicy, ProbeSpec, build_chart, builtin_field,
                      select_xi)
from calderon.reconstruct import grad_clean_nodes, grad_target, midpoint_nodes

disk = DomainGeometry.disk()
gamma = builtin_field("affine", {"a": 2.0, "b": [1.0, 0.0]})
chart = build_chart(disk, 0.0)
spec = ProbeSpec(chart, select_xi(chart, "ccw"), 0.5, "grad")
clean = CleanOracle(disk, gamma, MeshPolicy(ladder=1.1))


def gb(theta):
    return gamma.at(disk.point(theta))


out, inw = grad_target(gamma, spec, "outward"), grad_target(gamma, spec, "inward")
print(f"outward-normal value {out:.4f}, inward-normal value {inw:.4f}")
for T in (4.0, 8.0, 16.0):
    nodes, w = midpoint_nodes(T)
    Y = w @ grad_clean_nodes(clean, spec, nodes, gb) / T
    print(f"T = {T:5.1f}: average {Y.real:+.4f}{Y.imag:+.4f}i, |Y - inward| = {abs(Y - inw):.2e}")
