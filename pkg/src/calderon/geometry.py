"""Domains with graph-like boundaries and local boundary charts.

A domain is a star-shaped region bounded by ``r(theta) = 1 + rho(theta)`` with
``rho`` a trigonometric polynomial (``rho = 0`` is the unit disk).  A chart at a
boundary point ``P`` rotates and translates global coordinates so that ``P``
sits at the origin, the counter-clockwise tangent is ``+e_1`` and the inward
normal is ``+e_2``; the boundary is then locally the graph ``y_2 = phi(y_1)``
with the domain above it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * np.pi


class ChartError(ValueError):
    """The boundary is not a graph over any admissible chart radius."""


@dataclass(frozen=True)
class DomainGeometry:
    """Radially perturbed unit disk.

    ``rho(theta) = sum_k cos_coeffs[k-1] cos(k theta) + sin_coeffs[k-1] sin(k theta)``.
    """

    kind: str = "disk"
    cos_coeffs: tuple = ()
    sin_coeffs: tuple = ()

    def __post_init__(self):
        if self.kind not in ("disk", "perturbed"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        object.__setattr__(self, "cos_coeffs", tuple(float(c) for c in self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", tuple(float(c) for c in self.sin_coeffs))
        if self.kind == "disk" and (any(self.cos_coeffs) or any(self.sin_coeffs)):
            raise ValueError("a disk takes no perturbation coefficients")
        th = np.linspace(0.0, TWO_PI, 4096, endpoint=False)
        if np.max(np.abs(self.rho(th))) >= 0.5:
            raise ValueError("perturbation must satisfy |rho| < 1/2")

    @classmethod
    def disk(cls) -> "DomainGeometry":
        return cls("disk")

    @classmethod
    def perturbed(cls, cos_coeffs=(), sin_coeffs=()) -> "DomainGeometry":
        return cls("perturbed", tuple(cos_coeffs), tuple(sin_coeffs))

    @property
    def is_disk(self) -> bool:
        return self.kind == "disk"

    def _modes(self):
        k_c = np.arange(1, len(self.cos_coeffs) + 1)
        k_s = np.arange(1, len(self.sin_coeffs) + 1)
        return k_c, np.asarray(self.cos_coeffs), k_s, np.asarray(self.sin_coeffs)

    def rho(self, theta, deriv: int = 0):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros_like(theta)
        k_c, a, k_s, b = self._modes()
        for k, c in zip(k_c, a):
            # d^m/dθ^m cos(kθ) = k^m cos(kθ + mπ/2)
            out = out + c * k**deriv * np.cos(k * theta + deriv * np.pi / 2)
        for k, c in zip(k_s, b):
            out = out + c * k**deriv * np.sin(k * theta + deriv * np.pi / 2)
        return out

    def radius(self, theta):
        return 1.0 + self.rho(theta)

    def point(self, theta):
        theta = np.asarray(theta, dtype=float)
        r = self.radius(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def derivative(self, theta):
        """dX/dtheta."""
        theta = np.asarray(theta, dtype=float)
        r = self.radius(theta)
        dr = self.rho(theta, 1)
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([dr * c - r * s, dr * s + r * c], axis=-1)

    def second_derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        r = self.radius(theta)
        dr = self.rho(theta, 1)
        d2r = self.rho(theta, 2)
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([d2r * c - 2 * dr * s - r * c, d2r * s + 2 * dr * c - r * s], axis=-1)

    def speed(self, theta):
        return np.hypot(self.radius(theta), self.rho(theta, 1))

    def unit_tangent(self, theta):
        d = self.derivative(theta)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def outward_normal(self, theta):
        t = self.unit_tangent(theta)
        return np.stack([t[..., 1], -t[..., 0]], axis=-1)

    # -- arclength -----------------------------------------------------------------
    @cached_property
    def _speed_modes(self):
        n = 1024
        th = np.linspace(0.0, TWO_PI, n, endpoint=False)
        c = np.fft.rfft(self.speed(th)) / n
        keep = np.abs(c) > 1e-17 * abs(c[0])
        kmax = int(np.nonzero(keep)[0].max()) if keep.any() else 0
        return c[: kmax + 1]

    @property
    def length(self) -> float:
        return float(TWO_PI * self._speed_modes[0].real)

    def arclength(self, theta):
        """s(theta) measured counter-clockwise from theta = 0 (unwrapped)."""
        theta = np.asarray(theta, dtype=float)
        c = self._speed_modes
        s = c[0].real * theta
        if len(c) > 1:
            k = np.arange(1, len(c))
            # speed = c0 + 2 Re sum_k c_k e^{ikθ}
            e = np.exp(1j * np.multiply.outer(theta, k))
            s = s + 2.0 * np.real(((e - 1.0) / (1j * k)) @ c[1:])
        return s

    def theta_of_s(self, s):
        s = np.asarray(s, dtype=float)
        L = self.length
        th = TWO_PI * s / L
        if self.is_disk:
            return th
        prev = np.inf
        for _ in range(50):
            step = (self.arclength(th) - s) / self.speed(th)
            th = th - step
            big = np.max(np.abs(step), initial=0.0)
            # quadratic convergence stalls at round-off (~1e-15)
            if big < 1e-15 or (big < 1e-12 and big > 0.5 * prev):
                break
            prev = big
        return th

    def boundary_grid(self, n_b: int):
        """Uniform arclength grid: returns (s, theta, points)."""
        return _boundary_grid(self, int(n_b))

    @cached_property
    def diameter(self) -> float:
        th = np.linspace(0.0, TWO_PI, 720, endpoint=False)
        p = self.point(th)
        d = p[:, None, :] - p[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    @cached_property
    def max_radius(self) -> float:
        th = np.linspace(0.0, TWO_PI, 4096, endpoint=False)
        return float(self.radius(th).max())

    def contains(self, x, y):
        """Interior test for points given in global coordinates."""
        th = np.arctan2(y, x)
        return np.hypot(x, y) < self.radius(th)


_GRID_CACHE: dict = {}


def _boundary_grid(domain: DomainGeometry, n_b: int):
    key = (domain, n_b)
    hit = _GRID_CACHE.get(key)
    if hit is None:
        s = np.arange(n_b) * (domain.length / n_b)
        th = domain.theta_of_s(s)
        hit = (s, th, domain.point(th))
        if len(_GRID_CACHE) > 64:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = hit
    return hit


def wrap_angle(theta):
    """Map angles to (-pi, pi]."""
    return -(np.mod(-np.asarray(theta, dtype=float) + np.pi, TWO_PI) - np.pi)


@dataclass(frozen=True)
class BoundaryChart:
    """Local graph coordinates ``(y', y_d)`` at an anchor point P.

    ``phi``/``dphi`` evaluate the graph function and its slope in chart
    coordinates; ``F(x) = (x' + p', x_d + phi(x' + p'))`` flattens the boundary.
    ``rotation`` maps global offsets ``X - P_global`` to chart offsets; charts
    built from a domain put P at the chart origin, so ``p' = phi(p') = 0``.
    """

    phi: Callable
    dphi: Callable
    radius: float
    p_prime: float = 0.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(2))
    anchor: np.ndarray = field(default_factory=lambda: np.zeros(2))
    domain: Optional[DomainGeometry] = None
    theta_p: Optional[float] = None
    theta_range: Optional[tuple] = None
    ccw_axis: bool = True
    holder: tuple = (1.0, 0.0)

    @classmethod
    def from_graph(cls, phi, dphi, p_prime=0.0, radius=0.5, holder=(1.0, 0.0)):
        """Synthetic chart for a graph given in chart coordinates (no domain)."""
        anchor = np.array([p_prime, float(phi(p_prime))])
        return cls(phi=phi, dphi=dphi, radius=radius, p_prime=p_prime,
                   anchor=anchor, holder=holder)

    @classmethod
    def flat(cls, radius=0.5) -> "BoundaryChart":
        return cls.from_graph(lambda x: np.zeros_like(np.asarray(x, float)),
                              lambda x: np.zeros_like(np.asarray(x, float)),
                              radius=radius)

    @property
    def slope(self) -> float:
        return float(self.dphi(self.p_prime))

    @property
    def p_chart(self) -> np.ndarray:
        """Chart coordinates of P."""
        return np.array([self.p_prime, float(self.phi(self.p_prime))])

    def F(self, x):
        x = np.asarray(x, dtype=float)
        xp = x[..., 0] + self.p_prime
        return np.stack([xp, x[..., 1] + self.phi(xp)], axis=-1)

    def F_inv(self, y):
        y = np.asarray(y, dtype=float)
        return np.stack([y[..., 0] - self.p_prime, y[..., 1] - self.phi(y[..., 0])], axis=-1)

    def grad_F_inv(self, yp):
        """Jacobian of F^{-1} at chart points with first coordinate ``yp``."""
        yp = np.asarray(yp, dtype=float)
        J = np.zeros(yp.shape + (2, 2))
        J[..., 0, 0] = 1.0
        J[..., 1, 1] = 1.0
        J[..., 1, 0] = -self.dphi(yp)
        return J

    def to_chart(self, X):
        """Global coordinates -> chart coordinates (y', y_d)."""
        X = np.asarray(X, dtype=float)
        return (X - self.anchor) @ self.rotation.T + self.p_chart

    def to_global(self, y):
        y = np.asarray(y, dtype=float)
        return (y - self.p_chart) @ self.rotation + self.anchor

    def x_prime_of_theta(self, theta):
        """Flattened tangential coordinate of boundary points given by angle.

        Returns NaN for parameters outside the chart's angular window.
        """
        if self.domain is None:
            raise ValueError("chart has no domain")
        theta = np.asarray(theta, dtype=float)
        d = wrap_angle(theta - self.theta_p)
        lo, hi = self.theta_range
        y = self.to_chart(self.domain.point(theta))
        xp = y[..., 0] - self.p_prime
        return np.where((d >= lo) & (d <= hi), xp, np.nan)


def _graph_inverse(domain, theta_p, R, P, yp, speed0):
    """Angles theta with (R (X(theta) - P))_1 = yp, by Newton from a linear guess."""
    th = theta_p + np.asarray(yp, dtype=float) / speed0
    for _ in range(60):
        X = domain.point(th)
        dX = domain.derivative(th)
        g = (X - P) @ R[0] - yp
        dg = dX @ R[0]
        step = g / dg
        th = th - step
        if np.max(np.abs(step), initial=0.0) < 1e-15:
            break
    return th


def build_chart(domain: DomainGeometry, theta_p: float, max_radius: float = 0.5,
                max_slope: float = 4.0) -> BoundaryChart:
    """Chart at the boundary point with angle ``theta_p``.

    The radius starts at ``max_radius`` and is halved until the boundary piece
    through P is a graph with ``|phi'| <= max_slope`` that no other part of the
    boundary enters.
    """
    theta_p = float(theta_p)
    P = domain.point(theta_p)
    T = domain.unit_tangent(theta_p)
    n_in = -domain.outward_normal(theta_p)
    R = np.stack([T, n_in])
    speed0 = float(domain.speed(theta_p))
    floor = 1e-3 * domain.diameter

    r = max_radius
    while r >= floor:
        window = _check_chart_radius(domain, theta_p, R, P, r, max_slope, speed0)
        if window is not None:
            break
        r *= 0.5
    else:
        raise ChartError(f"no chart of radius >= {floor:.3g} at theta={theta_p:.6g}")

    th_lo, th_hi = window

    def phi(yp):
        yp = np.asarray(yp, dtype=float)
        th = _graph_inverse(domain, theta_p, R, P, yp, speed0)
        return (domain.point(th) - P) @ R[1]

    def dphi(yp):
        yp = np.asarray(yp, dtype=float)
        th = _graph_inverse(domain, theta_p, R, P, yp, speed0)
        dX = domain.derivative(th)
        return (dX @ R[1]) / (dX @ R[0])

    ths = np.linspace(th_lo, th_hi, 801) + theta_p
    dX = domain.derivative(ths)
    d2X = domain.second_derivative(ths)
    a, b = dX @ R[0], dX @ R[1]
    # φ'' = (b' a - a' b) / a^3
    curv = ((d2X @ R[1]) * a - (d2X @ R[0]) * b) / a**3
    holder = (1.0, float(np.max(np.abs(curv))))

    return BoundaryChart(phi=phi, dphi=dphi, radius=r, p_prime=0.0, rotation=R,
                         anchor=P, domain=domain, theta_p=theta_p,
                         theta_range=(th_lo, th_hi), ccw_axis=True, holder=holder)


def _check_chart_radius(domain, theta_p, R, P, r, max_slope, speed0):
    th_lo = float(_graph_inverse(domain, theta_p, R, P, -r, speed0) - theta_p)
    th_hi = float(_graph_inverse(domain, theta_p, R, P, r, speed0) - theta_p)
    if not (th_lo < 0.0 < th_hi) or th_hi - th_lo >= np.pi:
        return None
    ths = theta_p + np.linspace(th_lo, th_hi, 2001)
    dX = domain.derivative(ths)
    a, b = dX @ R[0], dX @ R[1]
    if np.any(a <= 0) or np.any(np.abs(b) > max_slope * a):
        return None
    y = (domain.point(ths) - P) @ R[0]
    if abs(y[0] + r) > 1e-9 or abs(y[-1] - r) > 1e-9:
        return None
    # the rest of the boundary must stay out of the chart box
    rest = theta_p + th_hi + np.linspace(0.0, TWO_PI - (th_hi - th_lo), 4001)[1:-1]
    yr = (domain.point(rest) - P) @ R.T
    inside = (np.abs(yr[:, 0]) < r) & (np.abs(yr[:, 1]) < r)
    if np.any(inside):
        return None
    return th_lo, th_hi


@dataclass(frozen=True)
class FrameAtP:
    """Probe direction and boundary frame at P.

    ``xi`` is in chart coordinates.  ``tangent``/``normal`` are global unit
    vectors: ``normal`` is the outward normal, ``tangent`` the unit tangent
    ``-grad F^{-1}(P)^t xi / sqrt(1 + phi'^2)`` expressed globally.
    ``inward`` is ``grad F^{-1}(P)^t e_d / sqrt(1 + phi'^2)`` (chart side of the
    domain) in global coordinates, i.e. ``-normal``.
    """

    xi: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    inward: np.ndarray
    tangent_chart: np.ndarray
    normal_chart: np.ndarray
    orientation: str

    @property
    def xi_prime(self) -> float:
        return float(self.xi[0])


def select_xi(chart: BoundaryChart, orientation: str = "ccw") -> FrameAtP:
    """Closed-form probe direction for d = 2.

    ``xi = +-(1 + phi'^2, phi')`` satisfies ``xi.A xi = e_d.A e_d`` and
    ``xi.A e_d = 0`` for ``A = grad F^{-1} grad F^{-1}^t`` at P.  The sign is
    chosen so that ``tau_P = -grad F^{-1}(P)^t xi / sqrt(1 + phi'^2)`` points
    in the requested direction (``"ccw"``/``"cw"`` along the boundary, or
    ``"+x"``/``"-x"`` along the chart axis).
    """
    s = chart.slope
    q = 1.0 + s * s
    xi0 = np.array([q, s])
    # with sign +1, tau_P points along -y'
    if orientation in ("ccw", "cw"):
        axis_ccw = chart.ccw_axis
        tau0_is_ccw = not axis_ccw
        sign = 1.0 if tau0_is_ccw == (orientation == "ccw") else -1.0
    elif orientation in ("+x", "-x"):
        sign = 1.0 if orientation == "-x" else -1.0
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    xi = sign * xi0
    J = chart.grad_F_inv(chart.p_prime)
    tau_c = -(J.T @ xi) / np.sqrt(q)
    inward_c = (J.T @ np.array([0.0, 1.0])) / np.sqrt(q)
    Rt = chart.rotation.T  # chart offset -> global offset
    return FrameAtP(
        xi=xi,
        tangent=Rt @ tau_c,
        normal=-(Rt @ inward_c),
        inward=Rt @ inward_c,
        tangent_chart=tau_c,
        normal_chart=-inward_c,
        orientation=orientation,
    )


def pullback_metric(chart: BoundaryChart, x, gamma=None):
    """``A(x) = grad F^{-1}(F(x)) grad F^{-1}(F(x))^t``, optionally times gamma(F(x)).

    ``x`` holds chart points (..., 2); ``gamma`` is a conductivity evaluated at
    global coordinates.
    """
    x = np.asarray(x, dtype=float)
    yp = x[..., 0] + chart.p_prime
    J = chart.grad_F_inv(yp)
    A = J @ np.swapaxes(J, -1, -2)
    if gamma is not None:
        X = chart.to_global(chart.F(x))
        A = A * np.asarray(gamma.value(X[..., 0], X[..., 1]))[..., None, None]
    return A
