import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calderon.boundary import coefficients, index_to_mode, inner
from calderon.geometry import BoundaryChart, select_xi
from calderon.probes import (ProbeSpec, eta, eta_l2, gamma_probe, grad_probe, pair_decay_check,
                             probe_gamma, probe_grad, probe_inner)

from conftest import make_spec


def flat_spec(mode, m_rule=None):
    chart = BoundaryChart.flat(radius=0.5)
    return ProbeSpec(chart, select_xi(chart, "-x"), 0.5, mode, m_rule)


def test_eta_shape():
    t = np.array([0.0, 0.3, 0.5, 0.75, 1.0, 1.5, -0.4, -2.0])
    v = eta(t)
    np.testing.assert_array_equal(v[[0, 1, 2, 6]], 1.0)
    np.testing.assert_array_equal(v[[4, 5, 7]], 0.0)
    assert 0 < v[3] < 1
    s = np.linspace(0.5, 1.0, 501)
    assert np.all(np.diff(eta(s)) <= 0)


def test_eta_derivatives_resolution_independent():
    # a C-infinity cutoff has bounded derivatives: refining the grid leaves them unchanged
    def maxima(n):
        x = np.linspace(-1.2, 1.2, n)
        d, out = eta(x), []
        for _ in range(3):
            d = np.gradient(d, x[1] - x[0])
            out.append(np.max(np.abs(d)))
        return np.array(out)

    np.testing.assert_allclose(maxima(24001), maxima(96001), rtol=2e-3)
    assert maxima(96001)[0] == pytest.approx(4.0, rel=1e-6)


def test_eta_l2_independent_quadrature():
    # oracle: mpmath tanh-sinh on the explicit transition formula
    def e(t):
        x = 2 * (1 - t)
        a = mpmath.exp(-1 / x) if x > 0 else mpmath.mpf(0)
        b = mpmath.exp(-1 / (1 - x)) if x < 1 else mpmath.mpf(0)
        return a / (a + b)

    with mpmath.workdps(30):
        ref = 1 + 2 * mpmath.quad(lambda t: e(t) ** 2, [0.5, 0.75, 1])
    assert eta_l2() == pytest.approx(float(ref), rel=1e-12)


@pytest.mark.parametrize("N", [4.0, 16.0, 100.0, 400.0])
def test_flat_gamma_norm(N):
    # with M = sqrt(N) the normalized probe has ||f_N||^2 = 1/N exactly on a flat boundary
    p = gamma_probe(flat_spec("gamma", "sqrt"), N)
    assert N * p.norm_sq() == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("t", [2.0, 5.0, 17.0, 64.0])
def test_flat_grad_norm(t):
    assert grad_probe(flat_spec("grad"), t).norm_sq() == pytest.approx(2.0, rel=1e-10)


def test_gamma_norm_order_one_over_N(disk):
    spec = make_spec(disk)
    vals = [N * gamma_probe(spec, N).norm_sq() for N in (4, 16, 64, 256)]
    np.testing.assert_allclose(vals, 1.0, rtol=0.02)


def test_grad_norm_ratio_bounded(disk):
    spec = make_spec(disk, mode="grad")
    norms = np.array([grad_probe(spec, t).norm_sq() for t in np.geomspace(4, 64, 9)])
    assert norms.max() / norms.min() <= 1.5


def test_trace_identity_against_chart_formula(bumpy):
    spec = make_spec(bumpy, 0.8)
    p = gamma_probe(spec, 40.0)
    f = p.boundary_function()
    _, theta, X = f.grid()
    y = spec.chart.to_chart(X)
    xp = spec.chart.F_inv(y)[:, 0]
    expect = np.where(np.abs(xp) < 1 / p.M,
                      p.amplitude * eta(p.M * np.abs(xp)) * np.exp(1j * p.N * spec.xi_prime * xp), 0)
    # restrict to the chart window
    near = (np.abs(xp) < spec.chart.radius) & (np.abs(y[:, 1]) < spec.chart.radius)
    np.testing.assert_allclose(f.samples[near], expect[near], atol=1e-13)
    assert np.all(f.samples[~near] == 0)


@settings(max_examples=20, deadline=None)
@given(st.floats(4.0, 300.0))
def test_support_shrinks_like_one_over_M(N):
    from calderon.geometry import DomainGeometry
    d = DomainGeometry.disk()
    spec = make_spec(d)
    p = gamma_probe(spec, N)
    f = p.boundary_function()
    _, theta, X = f.grid()
    xp = spec.chart.x_prime_of_theta(theta)
    nz = np.abs(f.samples) > 0
    assert np.all(np.abs(xp[nz]) < 1 / p.M)
    assert p.M == pytest.approx(N ** (2 / 3))


def test_support_beyond_chart_rejected(disk):
    spec = make_spec(disk, mode="grad")
    with pytest.raises(ValueError):
        grad_probe(spec, 1.5)
    with pytest.raises(ValueError):
        gamma_probe(spec, 0.5)


def test_t_one_matches_gamma_family_parameters():
    spec = flat_spec("grad")
    p = grad_probe(ProbeSpec(BoundaryChart.flat(radius=1.0), spec.frame, 0.5, "grad"), 1.0)
    assert (p.N, p.M) == (1.0, 1.0)
    assert p.amplitude == pytest.approx(math.sqrt(2 / eta_l2()))


def test_dominant_mode_tracks_frequency(disk):
    spec = make_spec(disk)
    peaks = []
    Ns = [32, 64, 128, 256]
    for N in Ns:
        f = probe_gamma(spec, N)
        K = f.n_b // 8
        a = coefficients(f, K)
        peaks.append(int(index_to_mode(np.argmax(np.abs(a)))))
    # ccw orientation: the probe oscillates like exp(-i N s); the peak sits near -N
    np.testing.assert_allclose(peaks, [-N for N in Ns], atol=3)
    assert np.polyfit(Ns, peaks, 1)[0] == pytest.approx(-1.0, abs=0.02)


def test_probe_inner_matches_boundary_quadrature(disk):
    spec = make_spec(disk, mode="grad")
    t, s = 6.0, 7.0
    n_b = max(probe_grad(spec, t).n_b, probe_grad(spec, s).n_b)
    ft, fs = probe_grad(spec, t, n_b=n_b), probe_grad(spec, s, n_b=n_b)
    assert probe_inner(spec, t, s) == pytest.approx(inner(ft, fs), abs=1e-8)
    assert probe_inner(spec, t, t).real == pytest.approx(ft.norm() ** 2, rel=1e-8)


def test_pair_decay_constant_generalizes(disk):
    spec = make_spec(disk, mode="grad")
    rng = np.random.default_rng(3)
    pairs = rng.uniform(4, 40, size=(40, 2))
    pairs = pairs[np.abs(pairs[:, 0] - pairs[:, 1]) > 0.5]
    fit, held = pairs[:20], pairs[20:]
    C = max(pair_decay_check(spec, t, s) for t, s in fit)
    assert all(pair_decay_check(spec, t, s) <= 2 * C for t, s in held)
    with pytest.raises(ValueError):
        pair_decay_check(spec, 5.0, 5.0)
