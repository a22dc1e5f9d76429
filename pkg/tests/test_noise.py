import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calderon.boundary import BoundaryBasis, BoundaryFunction, coefficients
from calderon.noise import (NoiseRealization, NoisyOracle, complex_gaussian_from_uniforms,
                            noise_contraction, noise_pair, sample_noise, second_moment,
                            truncation_rule, zero_noise)
from calderon.solver import CleanOracle


def test_same_seed_same_realization():
    a, b = sample_noise(7, 24), sample_noise(7, 24)
    np.testing.assert_array_equal(a.X, b.X)
    assert not np.array_equal(a.X, sample_noise(8, 24).X)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 20), st.integers(1, 20))
def test_extension_keeps_entries(seed, k1, extra):
    small, big = sample_noise(seed, k1), sample_noise(seed, k1 + extra)
    np.testing.assert_array_equal(big.X[:k1, :k1], small.X)


def test_entry_and_lazy_rows_agree():
    n = sample_noise(3, 40)
    np.testing.assert_array_equal(n.rows(10, 13), n.X[10:13])
    assert n.entry(5, 17) == n.X[5, 17]


def test_neighbouring_seeds_uncorrelated():
    K = 64
    a, b = sample_noise(11, K).X.ravel(), sample_noise(12, K).X.ravel()
    corr = abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    assert corr <= 0.1


def test_moment_invariants_single_realization():
    K = 128
    X = sample_noise(0, K).X
    # sample mean / variance / pseudo-variance of K^2 unit complex Gaussians
    assert abs(X.mean()) <= 4 / K
    assert abs(np.mean(np.abs(X) ** 2) - 1) <= 4 / K
    assert abs(np.mean(X**2)) <= 4 / K


def test_complex_gaussian_transform_is_exact():
    u = np.array([0.5, 0.25, 0.0, 0.0])
    z = complex_gaussian_from_uniforms(u)
    # |z|^2 = -log(1 - u1), phase 2 pi u2
    assert abs(z[0]) ** 2 == pytest.approx(math.log(2), rel=1e-15)
    assert np.angle(z[0]) == pytest.approx(math.pi / 2, rel=1e-15)
    assert z[1] == 0


def test_zero_noise_contributes_nothing(disk):
    f = BoundaryFunction.fourier_mode(disk, 2, 64)
    assert noise_pair(zero_noise(9), f, f) == 0
    assert zero_noise(9).is_zero


def test_basis_pair_reads_single_entry(disk):
    K = 9
    basis = BoundaryBasis(disk.length, K)
    noise = sample_noise(5, K)
    for i, j in [(0, 1), (3, 2), (8, 8)]:
        fi, fj = basis.function(disk, i, 64), basis.function(disk, j, 64)
        assert noise_pair(noise, fi, fj) == pytest.approx(noise.X[i, j], abs=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_noise_pair_bilinear(seed, c):
    from calderon.geometry import DomainGeometry
    d = DomainGeometry.disk()
    rng = np.random.default_rng(seed)
    K = 11
    basis = BoundaryBasis(d.length, K)
    funcs = [basis.function(d, i, 64) for i in range(K)]
    a1, a2, b = (rng.normal(size=K) + 1j * rng.normal(size=K) for _ in range(3))
    f1 = sum((x * e for x, e in zip(a1, funcs)), BoundaryFunction(d, np.zeros(64)))
    f2 = sum((x * e for x, e in zip(a2, funcs)), BoundaryFunction(d, np.zeros(64)))
    g = sum((x * e for x, e in zip(b, funcs)), BoundaryFunction(d, np.zeros(64)))
    n = sample_noise(seed, K)
    lhs = noise_pair(n, f1 + f2 * c, g)
    rhs = noise_pair(n, f1, g) + c * noise_pair(n, f2, g)
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(rhs)))
    # conj-free: (f|e_i)(g|e_j) X_ij computed directly
    assert noise_pair(n, f1, g) == pytest.approx(a1 @ n.X @ b, abs=1e-9)


def test_contraction_routes_agree():
    rng = np.random.default_rng(1)
    K = 300  # spans two row blocks
    n = sample_noise(9, K)
    A = rng.normal(size=(3, K)) + 1j * rng.normal(size=(3, K))
    B = rng.normal(size=(3, K)) + 1j * rng.normal(size=(3, K))
    direct = np.array([A[k] @ n.X @ B[k] for k in range(3)])
    np.testing.assert_allclose(n.contract(A, B), direct, rtol=1e-12)
    C = np.outer(A[0], B[0])
    assert noise_contraction(n, C) == pytest.approx(direct[0], rel=1e-12)


def test_query_order_does_not_matter(disk):
    K = 21
    fs = [BoundaryFunction.fourier_mode(disk, n, 128) for n in (1, -3, 5)]
    a = [noise_pair(sample_noise(4, K), f, g) for f in fs for g in fs]
    b = [noise_pair(sample_noise(4, K), f, g) for f in reversed(fs) for g in reversed(fs)]
    np.testing.assert_allclose(a, list(reversed(b)), atol=0)


def test_second_moment_closed_form(disk):
    K = 15
    f = BoundaryFunction.fourier_mode(disk, 1, 64) + BoundaryFunction.fourier_mode(disk, -2, 64) * 0.5
    g = BoundaryFunction.fourier_mode(disk, 3, 64)
    a, b = coefficients(f, K), coefficients(g, K)
    assert second_moment(f, g, K) == np.sum(np.abs(a) ** 2) * np.sum(np.abs(b) ** 2)
    assert second_moment(f, g, K) == pytest.approx(f.norm() ** 2 * g.norm() ** 2, rel=1e-12)


def test_variance_of_single_entry_over_seeds():
    vals = np.array([sample_noise(s, 1).X[0, 0] for s in range(20000)])
    m2 = np.abs(vals) ** 2
    se = m2.std(ddof=1) / math.sqrt(len(m2))
    assert abs(m2.mean() - 1) <= 3 * se
    assert abs(vals.mean()) <= 3 / math.sqrt(len(vals))


def test_truncation_rule_examples():
    L = 2 * math.pi
    # cover ceil(2 N) + 32 on the disk with |xi'| = 1
    assert truncation_rule(64, 1.0, L) == 2 * (128 + 32) + 1
    assert truncation_rule(64, 1.0, L, M=16) == 2 * (max(128, 64 + 256) + 32) + 1
    with_M = truncation_rule(64, 1.0, L, M=2)
    assert with_M == truncation_rule(64, 1.0, L)


def test_noisy_oracle_decomposition(disk):
    clean = CleanOracle(disk, mode="analytic-disk")
    f = BoundaryFunction.fourier_mode(disk, 2, 64)
    g = BoundaryFunction.fourier_mode(disk, -2, 64)
    noisy = NoisyOracle(clean, sample_noise(0, 9))
    c, n = noisy.measure(f, g)
    assert c == pytest.approx(2 * 2 * math.pi, rel=1e-12)
    assert noisy.noisy_pair(f, g) == c + n
    assert NoisyOracle(clean, None).noisy_pair(f, g) == c


def test_averaging_over_realizations_recovers_clean(disk):
    clean = CleanOracle(disk, mode="analytic-disk")
    f = BoundaryFunction.fourier_mode(disk, 1, 64)
    g = BoundaryFunction.fourier_mode(disk, -1, 64)
    vals = np.array([NoisyOracle(clean, sample_noise(s, 5)).noisy_pair(f, g) for s in range(1000)])
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - 2 * math.pi) <= 3 * se * math.sqrt(2)


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        sample_noise(-1, 4)
    with pytest.raises(ValueError):
        NoiseRealization(0, 0)
