import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from calderon.geometry import (BoundaryChart, ChartError, DomainGeometry, build_chart,
                               pullback_metric, select_xi, wrap_angle)


def test_disk_length_and_points(disk):
    assert disk.length == pytest.approx(2 * math.pi, rel=1e-13)
    th = np.linspace(0, 2 * math.pi, 17)
    np.testing.assert_allclose(np.linalg.norm(disk.point(th), axis=1), 1.0, atol=1e-15)


def test_perturbed_length_matches_quadrature(bumpy):
    ref, _ = integrate.quad(lambda t: float(bumpy.speed(t)), 0, 2 * math.pi, epsabs=1e-13, limit=200)
    assert bumpy.length == pytest.approx(ref, rel=1e-11)


def test_rejects_large_perturbation():
    with pytest.raises(ValueError):
        DomainGeometry.perturbed((0.6,), ())
    with pytest.raises(ValueError):
        DomainGeometry("disk", (0.1,), ())


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 2 * math.pi - 1e-9))
def test_arclength_roundtrip(bumpy, theta):
    s = bumpy.arclength(theta)
    assert float(bumpy.theta_of_s(s)) == pytest.approx(theta, abs=1e-10)


def test_tangent_and_normal_are_orthonormal(bumpy):
    th = np.linspace(0, 2 * math.pi, 50, endpoint=False)
    T, n = bumpy.unit_tangent(th), bumpy.outward_normal(th)
    np.testing.assert_allclose(np.sum(T * n, axis=1), 0.0, atol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-14)
    # outward: moving along n leaves the domain
    X = bumpy.point(th) + 1e-3 * n
    assert not np.any(bumpy.contains(X[:, 0], X[:, 1]))


def test_disk_chart_graph_function(disk):
    chart = build_chart(disk, 0.0)
    y = np.linspace(-0.45, 0.45, 31)
    # at P=(1,0) with tangent (0,1) and inward normal (-1,0) the circle reads 1 - sqrt(1 - y^2)
    np.testing.assert_allclose(chart.phi(y), 1 - np.sqrt(1 - y**2), atol=1e-13)
    np.testing.assert_allclose(chart.dphi(y), y / np.sqrt(1 - y**2), atol=1e-12)
    assert chart.slope == pytest.approx(0.0, abs=1e-15)


def test_chart_slope_matches_finite_difference(bumpy):
    chart = build_chart(bumpy, 1.1)
    y = np.linspace(-0.8, 0.8, 9) * chart.radius
    d = 1e-6
    fd = (chart.phi(y + d) - chart.phi(y - d)) / (2 * d)
    np.testing.assert_allclose(chart.dphi(y), fd, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.4, 0.4), st.floats(-0.3, 0.3))
def test_chart_maps_are_inverse(disk, a, b):
    chart = build_chart(disk, 0.7)
    y = np.array([a, b])
    np.testing.assert_allclose(chart.to_chart(chart.to_global(y)), y, atol=1e-13)
    np.testing.assert_allclose(chart.F(chart.F_inv(y)), y, atol=1e-13)


def test_boundary_lies_on_flattened_axis(bumpy):
    chart = build_chart(bumpy, 2.0)
    lo, hi = chart.theta_range
    th = 2.0 + np.linspace(lo, hi, 21)
    x = chart.F_inv(chart.to_chart(bumpy.point(th)))
    np.testing.assert_allclose(x[:, 1], 0.0, atol=1e-12)


def test_domain_lies_above_graph(disk):
    chart = build_chart(disk, 0.0)
    y = chart.to_chart(np.array([[0.9, 0.0], [0.95, 0.1]]))
    assert np.all(y[:, 1] > chart.phi(y[:, 0]))


def test_ccw_frame_on_disk(disk):
    fr = select_xi(build_chart(disk, 0.0), "ccw")
    np.testing.assert_allclose(fr.xi, [-1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(fr.tangent, [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(fr.normal, [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(fr.inward, [-1.0, 0.0], atol=1e-15)
    cw = select_xi(build_chart(disk, 0.0), "cw")
    np.testing.assert_allclose(cw.tangent, [0.0, -1.0], atol=1e-15)


@pytest.mark.parametrize("theta_p", [0.3, 1.9, 4.4])
def test_frame_matches_parametrization(bumpy, theta_p):
    fr = select_xi(build_chart(bumpy, theta_p), "ccw")
    np.testing.assert_allclose(fr.tangent, bumpy.unit_tangent(theta_p), atol=1e-12)
    np.testing.assert_allclose(fr.normal, bumpy.outward_normal(theta_p), atol=1e-12)


@pytest.mark.parametrize("slope_c", [0.0, 0.3, -0.7])
def test_xi_metric_conditions(slope_c):
    # synthetic graph with nonzero slope at P
    chart = BoundaryChart.from_graph(lambda x: slope_c * np.asarray(x) + 0.4 * np.asarray(x) ** 2,
                                     lambda x: slope_c + 0.8 * np.asarray(x), p_prime=0.1)
    for orient in ("+x", "-x"):
        fr = select_xi(chart, orient)
        A = pullback_metric(chart, np.zeros(2))
        ed = np.array([0.0, 1.0])
        assert fr.xi @ A @ fr.xi == pytest.approx(ed @ A @ ed, rel=1e-13)
        assert fr.xi @ A @ ed == pytest.approx(0.0, abs=1e-13)
        assert np.linalg.norm(fr.tangent) == pytest.approx(1.0, abs=1e-13)
        assert fr.tangent @ fr.normal == pytest.approx(0.0, abs=1e-13)


def test_flat_metric_is_identity():
    A = pullback_metric(BoundaryChart.flat(), np.array([[0.1, 0.2], [-0.3, 0.0]]))
    np.testing.assert_allclose(A, np.broadcast_to(np.eye(2), A.shape), atol=0)


def test_unknown_orientation(disk):
    with pytest.raises(ValueError):
        select_xi(build_chart(disk, 0.0), "up")


def test_chart_radius_shrinks_on_wiggly_boundary():
    wiggly = DomainGeometry.perturbed((0.0,) * 11 + (0.03,), ())
    chart = build_chart(wiggly, 0.2, max_slope=0.2)
    assert chart.radius < 0.5
    lo, hi = chart.theta_range
    th = 0.2 + np.linspace(lo, hi, 201)
    assert np.max(np.abs(chart.dphi(chart.to_chart(wiggly.point(th))[:, 0]))) <= 0.2 + 1e-9
    with pytest.raises(ChartError):
        build_chart(wiggly, 0.2, max_slope=1e-6)


def test_wrap_angle():
    np.testing.assert_allclose(wrap_angle([0.0, math.pi, 3 * math.pi / 2, -math.pi]),
                               [0.0, math.pi, -math.pi / 2, math.pi])
