"""Oscillating boundary probes concentrated at a point P.

In chart coordinates the probe trace is

    f(F(x', 0)) = amp * eta(M |x'|) * exp(i N xi' x')

with ``amp = N^{-1/2} M^{1/2} C_P`` for the conductivity family and
``amp = M^{1/2} C'_P`` (``N = t^2``, ``M = t``) for the normal-derivative
family.  On the flattened boundary ``x_d = 0`` the decaying factor
``exp(N (i xi_d - 1) x_d)`` equals one, so only ``xi'`` enters the trace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate

from .boundary import BoundaryFunction, probe_grid_size
from .geometry import BoundaryChart, FrameAtP
from .noise import truncation_rule


def _psi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    a = _psi(x)
    b = _psi(1.0 - np.asarray(x, dtype=float))
    return a / (a + b)


def eta(t):
    """Cutoff equal to 1 on |t| <= 1/2 and 0 on |t| >= 1."""
    return smooth_step(2.0 * (1.0 - np.abs(np.asarray(t, dtype=float))))


@lru_cache(maxsize=1)
def eta_l2() -> float:
    """I_eta = int_R eta(|x'|)^2 dx' (d = 2)."""
    val, _ = integrate.quad(lambda t: float(eta(t)) ** 2, 0.5, 1.0, epsabs=1e-14, epsrel=1e-13)
    return 1.0 + 2.0 * val


@dataclass(frozen=True)
class ProbeSpec:
    chart: BoundaryChart
    frame: FrameAtP
    theta: float = 0.5
    mode: str = "gamma"
    m_rule: Optional[str] = None
    dim: int = 2

    def __post_init__(self):
        if self.mode not in ("gamma", "grad"):
            raise ValueError("mode must be 'gamma' or 'grad'")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.dim != 2:
            raise NotImplementedError("only d = 2 is constructible")

    @property
    def domain(self):
        return self.chart.domain

    @property
    def xi_prime(self) -> float:
        return self.frame.xi_prime

    @property
    def slope(self) -> float:
        return self.chart.slope

    @property
    def C_P(self) -> float:
        return ((1.0 + self.slope**2) * eta_l2()) ** -0.5

    @property
    def C_prime_P(self) -> float:
        return math.sqrt(2.0) * (1.0 + self.slope**2) ** -0.25 * eta_l2() ** -0.5

    def M_of(self, N: float) -> float:
        rule = self.m_rule or ("holder" if self.mode == "gamma" else "sqrt")
        if rule == "holder":
            return N ** (1.0 / (1.0 + self.theta))
        if rule == "sqrt":
            return math.sqrt(N)
        raise ValueError(f"unknown M-rule {rule!r}")

    def with_mode(self, mode: str) -> "ProbeSpec":
        return ProbeSpec(self.chart, self.frame, self.theta, mode, None, self.dim)


@dataclass(frozen=True)
class Probe:
    spec: ProbeSpec
    N: float
    M: float
    amplitude: float

    @property
    def frequency(self) -> float:
        return self.N * abs(self.spec.xi_prime)

    @property
    def support(self) -> float:
        """Half-width of the support in the flattened tangential coordinate."""
        return 1.0 / self.M

    def on_chart(self, xp):
        xp = np.asarray(xp, dtype=float)
        return self.amplitude * eta(self.M * np.abs(xp)) * np.exp(1j * self.N * self.spec.xi_prime * xp)

    def norm_sq(self) -> float:
        """||f||^2 on the boundary by Gauss-Legendre quadrature in x' (ds = sqrt(1 + phi'^2) dx')."""
        chart = self.spec.chart
        nodes, weights = np.polynomial.legendre.leggauss(400)
        h = 1.0 / self.M
        total = 0.0
        # panels over the transition zones and the plateau
        for a, b in ((-h, -h / 2), (-h / 2, h / 2), (h / 2, h)):
            x = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            ds = np.sqrt(1.0 + chart.dphi(x + chart.p_prime) ** 2)
            total += 0.5 * (b - a) * np.sum(weights * np.abs(self.on_chart(x)) ** 2 * ds)
        return float(total)

    def boundary_values(self, theta):
        xp = self.spec.chart.x_prime_of_theta(theta)
        inside = np.isfinite(xp) & (np.abs(np.nan_to_num(xp, nan=np.inf)) < self.support)
        out = np.zeros(np.shape(theta), dtype=complex)
        out[inside] = self.on_chart(xp[inside])
        return out

    def boundary_function(self, n_b: Optional[int] = None, K: Optional[int] = None) -> BoundaryFunction:
        domain = self.spec.domain
        if domain is None:
            raise ValueError("probe spec has a synthetic chart; no boundary to sample")
        if n_b is None:
            if K is None:
                K = truncation_rule(self.N, self.spec.xi_prime, domain.length, self.M)
            n_b = probe_grid_size(K, self.N, self.spec.xi_prime, domain.length)
        meta = {"probe": self, "anchor_theta": self.spec.chart.theta_p, "N": self.N,
                "M": self.M, "frequency": self.frequency, "support": self.support}
        return BoundaryFunction.from_callable(domain, self.boundary_values, n_b, meta)


def _check_support(spec: ProbeSpec, M: float):
    if 1.0 / M > spec.chart.radius:
        raise ValueError(f"probe support 1/M={1.0 / M:.3g} exceeds chart radius {spec.chart.radius:.3g}")


def gamma_probe(spec: ProbeSpec, N: float) -> Probe:
    if N < 1:
        raise ValueError("N must be >= 1")
    M = spec.M_of(N)
    _check_support(spec, M)
    amp = N**-0.5 * M ** ((spec.dim - 1) / 2) * spec.C_P
    return Probe(spec, float(N), float(M), float(amp))


def grad_probe(spec: ProbeSpec, t: float) -> Probe:
    if t < 1:
        raise ValueError("t must be >= 1")
    N, M = float(t) ** 2, float(t)
    _check_support(spec, M)
    amp = M ** ((spec.dim - 1) / 2) * spec.C_prime_P
    return Probe(spec, N, M, float(amp))


def probe_gamma(spec: ProbeSpec, N: float, n_b: Optional[int] = None,
                K: Optional[int] = None) -> BoundaryFunction:
    """Trace f_N of the conductivity family sampled on the boundary grid."""
    return gamma_probe(spec, N).boundary_function(n_b, K)


def probe_grad(spec: ProbeSpec, t: float, n_b: Optional[int] = None,
               K: Optional[int] = None) -> BoundaryFunction:
    """Trace f_{t^2} of the normal-derivative family sampled on the boundary grid."""
    return grad_probe(spec, t).boundary_function(n_b, K)


def probe_inner(spec: ProbeSpec, t: float, s: float) -> complex:
    """(f_{t^2} | f_{s^2}) by quadrature in the chart coordinate."""
    pt, ps = grad_probe(spec, t), grad_probe(spec, s)
    chart = spec.chart
    h = min(pt.support, ps.support)
    omega = abs(pt.N - ps.N) * abs(spec.xi_prime) + 1.0
    n = int(min(max(2000, 40 * omega * 2 * h), 400000))
    nodes, weights = np.polynomial.legendre.leggauss(64)
    edges = np.linspace(-h, h, n // 64 + 2)
    a, b = edges[:-1, None], edges[1:, None]
    x = (0.5 * (b - a) * nodes + 0.5 * (a + b)).ravel()
    w = (0.5 * (b - a) * weights).ravel()
    ds = np.sqrt(1.0 + chart.dphi(x + chart.p_prime) ** 2)
    return complex(np.sum(w * pt.on_chart(x) * np.conj(ps.on_chart(x)) * ds))


def pair_decay_check(spec: ProbeSpec, t: float, s: float) -> float:
    """|(f_{t^2}|f_{s^2})| divided by (t + s + 1) / |t^2 - s^2|."""
    if t == s:
        raise ValueError("decay check needs t != s")
    if min(t, s) < 1:
        raise ValueError("t, s must be >= 1")
    return abs(probe_inner(spec, t, s)) / ((t + s + 1.0) / abs(t * t - s * s))

