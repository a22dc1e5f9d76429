import math
import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calderon.conductivity import builtin_field
from calderon.noise import NoisyOracle, sample_noise
from calderon.reconstruct import (calibrate_constant, filtering_moment, filtering_second_moment,
                                  fit_rate, gamma_noise_matrices, gamma_tail, grad_clean_nodes,
                                  grad_target, grad_truncation, midpoint_nodes, noise_truncation,
                                  parallel_map, plan_sample_size, planner_holds, quantile_experiment,
                                  recover_gamma, recover_grad, stage_one_boundary,
                                  trig_interpolant, window_length)
from calderon.solver import CleanOracle, MeshPolicy

from conftest import make_spec


# -- planner ---------------------------------------------------------------------------
def test_planner_worked_example():
    # C = 1, theta = 1/2, eps = 0.1: (N - 1)^(1/3) > 30  ->  N - 1 = 27001
    assert plan_sample_size(0.1, 0.5, 1.0) == 27002


def _gamma_criterion(N0, eps, theta, C):
    """Exact rational check of (C^2/eps)(1+th)/(1-th) < (N0-1)^((1-th)/(1+th))."""
    e, th, c = (Fraction(repr(float(v))) for v in (eps, theta, C))
    L = c**2 / e * (1 + th) / (1 - th)
    q = (1 - th) / (1 + th)
    # n^(a/b) > L  <=>  n^a > L^b for positive n, L
    return (N0 - 1) > 0 and Fraction(N0 - 1) ** q.numerator > L ** q.denominator


@pytest.mark.parametrize("eps,theta,C", [(0.5, 0.1, 0.3), (0.3, 0.2, 0.2), (0.9, 0.05, 0.5),
                                         (0.2, 0.5, 0.25)])
def test_planner_against_brute_force_tail(eps, theta, C):
    N0 = plan_sample_size(eps, theta, C)
    assert _gamma_criterion(N0, eps, theta, C)
    assert N0 == 1 or not _gamma_criterion(N0 - 1, eps, theta, C)
    p = 2 / (1 + theta)
    terms = 2_000_000
    n = np.arange(N0, N0 + terms, dtype=float)
    # brute-force partial sum plus an integral bound on what is left
    partial = np.sum(n ** -p)
    M = N0 + terms
    lo = C**2 * (partial + M ** (1 - p) / (p - 1))
    hi = C**2 * (partial + (M - 1) ** (1 - p) / (p - 1))
    assert hi <= eps
    assert lo * (1 - 1e-9) <= gamma_tail(C, theta, N0) <= hi * (1 + 1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 57).map(lambda k: k / 64), st.integers(1, 15).map(lambda k: k / 16),
       st.integers(1, 24).map(lambda k: k / 8))
def test_planner_criterion_is_tight(eps, theta, C):
    N0 = plan_sample_size(eps, theta, C)
    assert _gamma_criterion(N0, eps, theta, C)
    assert N0 == 1 or not _gamma_criterion(N0 - 1, eps, theta, C)
    # smaller eps never needs fewer samples
    assert plan_sample_size(eps / 2, theta, C) >= N0


def test_planner_grad_mode():
    eps, theta, C = 0.1, 0.5, 1.0
    N0 = plan_sample_size(eps, theta, C, "grad")
    # (N0 - 1)^(1/2) > 20 exactly: N0 - 1 = 401
    assert N0 == 402
    assert planner_holds(402, eps, theta, C, "grad") and not planner_holds(401, eps, theta, C, "grad")
    with pytest.raises(ValueError):
        plan_sample_size(1.5, 0.5, 1.0)
    with pytest.raises(ValueError):
        plan_sample_size(0.1, 0.5, 1.0, "curl")


# -- rates -----------------------------------------------------------------------------
def test_fit_rate_exact():
    N = np.array([16, 32, 64, 128, 256.0])
    slope, icpt = fit_rate(np.stack([N, 3 * N**-0.5], axis=1))
    assert slope == pytest.approx(-0.5, abs=1e-12)
    assert icpt == pytest.approx(math.log(3), abs=1e-12)
    with pytest.raises(ValueError):
        fit_rate([[1, 1], [2, 1], [3, 1]])
    with pytest.raises(ValueError):
        fit_rate([[4, 1], [4, 2], [4, 3], [4, 4]])


def test_fit_rate_robust_to_small_noise(rng):
    N = np.geomspace(16, 256, 5)
    err = 2 * N ** (-1 / 3) * (1 + 0.01 * rng.uniform(-1, 1, size=5))
    assert fit_rate(np.stack([N, err], axis=1))[0] == pytest.approx(-1 / 3, abs=0.02)


def test_calibration_and_quantile():
    pts = np.array([[16, 0.2], [32, 0.15], [64, 0.1]])
    C = calibrate_constant(pts, 0.5)
    assert C == pytest.approx(3 * max(0.2 * 16 ** (1 / 3), 0.15 * 32 ** (1 / 3), 0.1 * 64 ** (1 / 3)))
    assert quantile_experiment(3.05, np.zeros(10), 3.0, 64, 0.5, C) == 1.0
    assert quantile_experiment(3.05, np.full(10, 100.0), 3.0, 64, 0.5, C) == 0.0


# -- gamma recovery --------------------------------------------------------------------
def test_recover_gamma_constant_unit(disk):
    spec = make_spec(disk)
    oracle = NoisyOracle(CleanOracle(disk), None)
    tr = recover_gamma(oracle, spec, [64], truth=1.0)
    assert abs(tr.final - 1.0) <= 0.2
    assert tr.noise == [0j]


def test_recover_gamma_affine_monotone_and_decomposed(disk, affine_gamma):
    spec = make_spec(disk)
    clean = CleanOracle(disk, affine_gamma)
    tr = recover_gamma(NoisyOracle(clean, None), spec, [16, 32, 64], truth=3.0)
    assert np.all(np.diff(tr.errors) < 0)
    assert tr.errors[-1] < 0.15
    # with noise: estimate = clean + noise, noise equals the coefficient contraction
    K = noise_truncation(spec, 64)
    noise = sample_noise(3, K)
    cache = {}
    trn = recover_gamma(NoisyOracle(clean, noise), spec, [16, 32, 64], truth=3.0, clean_cache=cache)
    np.testing.assert_allclose(trn.clean, tr.clean, rtol=1e-12)
    np.testing.assert_allclose(np.array(trn.estimate), np.array(trn.clean) + np.array(trn.noise))
    A, B = gamma_noise_matrices(spec, [16, 32, 64], K)
    np.testing.assert_allclose(trn.noise, noise.contract(A, B), rtol=1e-10)
    with pytest.raises(ValueError):
        recover_gamma(NoisyOracle(clean, None), spec, [32, 16])


# -- derivative recovery ---------------------------------------------------------------
def test_window_length_policy():
    T, used = window_length(2, 0.5)
    assert T == pytest.approx(2**3.75) and used is None
    assert window_length(4, 0.5) == (8.0, "N^1.5")
    assert window_length(4, 0.5, "none")[0] == pytest.approx(4**3.75)
    assert window_length(4, 0.5, 10)[0] == 10.0
    with pytest.raises(ValueError):
        window_length(4, 0.5, -1)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 300.0))
def test_midpoint_nodes(T):
    nodes, w = midpoint_nodes(T)
    assert len(nodes) == max(32, math.ceil(8 * T))
    assert w.sum() == pytest.approx(T, rel=1e-12)
    assert nodes.min() > T and nodes.max() < 2 * T
    # exact for linear integrands
    assert np.sum(w * nodes) == pytest.approx(1.5 * T**2, rel=1e-12)


def test_honest_window_for_N2():
    nodes, _ = midpoint_nodes(window_length(2, 0.5)[0])
    assert len(nodes) == 108


def test_grad_targets(disk, affine_gamma):
    spec = make_spec(disk, mode="grad")
    assert grad_target(affine_gamma, spec, "outward") == pytest.approx(1 / 3)
    assert grad_target(affine_gamma, spec, "inward") == pytest.approx(-1 / 3)
    ey = builtin_field("exponential", {"c": 1.0, "alpha": [0.0, 1.0]})
    assert grad_target(ey, spec) == pytest.approx(1j)
    assert grad_target(ey, make_spec(disk, mode="grad", orientation="cw")) == pytest.approx(-1j)


def test_recover_grad_constant_gamma_vanishes(disk):
    g = builtin_field("constant", {"c": 2.0})
    spec = make_spec(disk, mode="grad")
    clean = CleanOracle(disk, g, MeshPolicy(ladder=1.25))
    rec = recover_grad(NoisyOracle(clean, None), spec, g, 4, T_override=4.0)
    assert abs(rec.Y) < 1e-8
    assert rec.T == 4.0 and rec.override == "T=4"


def test_recover_grad_tangential_part(disk):
    # gamma = e^y at (1, 0): the tangential derivative is 1 and the normal one vanishes
    g = builtin_field("exponential", {"c": 1.0, "alpha": [0.0, 1.0]})
    spec = make_spec(disk, mode="grad")
    clean = CleanOracle(disk, g, MeshPolicy(ladder=1.1))
    nodes, w = midpoint_nodes(5.0)
    cn = grad_clean_nodes(clean, spec, nodes, g)
    Y = np.sum(w * cn) / 5.0
    assert abs(Y - grad_target(g, spec, "inward")) <= 0.1
    # noise decomposition on the same nodes
    K = grad_truncation(spec, 5.0)
    rec = recover_grad(NoisyOracle(clean, sample_noise(1, K)), spec, g, 4, T_override=5.0,
                       clean_nodes=cn)
    assert rec.Y == pytest.approx(rec.clean_average + rec.noise_average)
    assert rec.clean_average == pytest.approx(Y)
    assert rec.noise_average != 0


def test_boundary_conductivity_perturbation_is_linear(disk, affine_gamma):
    spec = make_spec(disk, mode="grad")
    clean = CleanOracle(disk, affine_gamma, MeshPolicy(ladder=1.1))
    nodes = np.array([6.0, 7.0])

    def Y(delta):
        gb = lambda th: (2.0 + np.cos(th)) * (1 + delta * np.sin(th))  # noqa: E731
        return grad_clean_nodes(clean, spec, nodes, gb)

    base = Y(0.0)
    d1, d2 = Y(1e-3) - base, Y(2e-3) - base
    np.testing.assert_allclose(d2, 2 * d1, rtol=0.01)


# -- filtering ---------------------------------------------------------------------------
def test_filtering_routes_agree(disk, affine_gamma):
    spec = make_spec(disk, mode="grad")
    gb = affine_gamma.at
    closed = filtering_second_moment(spec, 2.0, gb)
    lit, se = filtering_moment(spec, 2.0, gb, range(400), route="literal")
    assert abs(lit - closed) <= 3 * se
    gram, se_g = filtering_moment(spec, 2.0, gb, range(400), route="gram")
    assert abs(gram - closed) <= 3 * se_g


def test_filtering_closed_form_decays(disk, affine_gamma):
    spec = make_spec(disk, mode="grad")
    Ts = [4.0, 8.0, 16.0]
    m = [filtering_second_moment(spec, T, affine_gamma.at) for T in Ts]
    assert m[0] > m[1] > m[2]
    assert np.polyfit(np.log(Ts), np.log(m), 1)[0] <= -0.5


# -- stage one ---------------------------------------------------------------------------
def test_trig_interpolant_exact():
    th = np.arange(8) * (2 * np.pi / 8)
    f = lambda t: 2 + np.cos(t) - 0.5 * np.sin(3 * t)  # noqa: E731
    p = trig_interpolant(th, f(th))
    x = np.linspace(0, 2 * np.pi, 50)
    np.testing.assert_allclose(p(x), f(x), atol=1e-13)
    with pytest.raises(ValueError):
        trig_interpolant([0.0, 0.1, 1.0], [1, 2, 3])


def test_stage_one_constant(disk):
    clean = CleanOracle(disk, builtin_field("constant", {"c": 2.0}), mode="analytic-disk")
    gb = stage_one_boundary(NoisyOracle(clean, None), disk, 8, 64)
    v = gb(np.linspace(0, 2 * np.pi, 13))
    np.testing.assert_allclose(v, v[0], rtol=1e-8)
    assert v[0] == pytest.approx(2.0, rel=0.1)


def test_parallel_map_order_preserving():
    def slow(x):
        time.sleep(0.01 * (5 - x))
        return x * x

    assert parallel_map(slow, list(range(5)), workers=4) == [0, 1, 4, 9, 16]
    assert parallel_map(slow, list(range(5)), workers=1) == [0, 1, 4, 9, 16]
