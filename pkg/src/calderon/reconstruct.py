"""Reconstruction drivers, sample-size planning and rate fitting.

``recover_gamma`` pairs the conductivity probes with their conjugates; the
pairing tends to gamma(P).  ``recover_grad`` averages, over t in [T, 2T],

    noisy_pair(f_t, conj(f_t) / gamma_b) - harmonic_pair(f_t, conj(f_t)),

which tends to (d gamma/d n_in + i tau . grad gamma) / gamma at P, where
n_in is the inward unit normal and tau the chart tangent (counter-clockwise
by default).
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import mpmath
import numpy as np

from .boundary import coefficients, pointwise_div, probe_grid_size
from .conductivity import ConductivityField
from .geometry import build_chart, select_xi
from .noise import NoisyOracle, complex_gaussian_from_uniforms, sample_noise, truncation_rule
from .probes import ProbeSpec, gamma_probe, grad_probe
from .solver import CleanOracle

WORKERS_ENV = "CALDERON_WORKERS"


def worker_count(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, default)))
    except ValueError:
        return default


def parallel_map(func: Callable, items: Sequence, workers: Optional[int] = None) -> list:
    """Order-preserving map; results never depend on scheduling."""
    workers = workers or worker_count()
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, items))


# -- conductivity at P -------------------------------------------------------------------
@dataclass
class RecoveryTrace:
    N: list = field(default_factory=list)
    estimate: list = field(default_factory=list)
    clean: list = field(default_factory=list)
    noise: list = field(default_factory=list)
    truth: Optional[float] = None
    theta: float = 0.5
    seed: Optional[int] = None
    probe: dict = field(default_factory=dict)

    def append(self, N, clean, noise):
        self.N.append(float(N))
        self.clean.append(complex(clean))
        self.noise.append(complex(noise))
        self.estimate.append(complex(clean) + complex(noise))

    @property
    def errors(self):
        if self.truth is None:
            return None
        return np.abs(np.asarray(self.estimate) - self.truth)

    @property
    def final(self) -> complex:
        return self.estimate[-1]

    def rows(self):
        err = self.errors
        for k, N in enumerate(self.N):
            yield (self.seed, N, self.estimate[k], self.clean[k], self.noise[k], self.truth,
                   None if err is None else float(err[k]))


def noise_truncation(spec: ProbeSpec, N_max: float, M_max: Optional[float] = None) -> int:
    if M_max is None:
        M_max = spec.M_of(N_max)
    return truncation_rule(N_max, spec.xi_prime, spec.domain.length, M_max)


def gamma_probe_pair(spec: ProbeSpec, N: float, K: Optional[int] = None):
    """(f_N, conj f_N) sampled finely enough for truncation K."""
    probe = gamma_probe(spec, N)
    if K is None:
        K = noise_truncation(spec, N)
    n_b = probe_grid_size(K, probe.N, spec.xi_prime, spec.domain.length)
    f = probe.boundary_function(n_b=n_b)
    return f, f.conj()


def recover_gamma(oracle: NoisyOracle, spec: ProbeSpec, N_list, truth: Optional[float] = None,
                  clean_cache: Optional[dict] = None) -> RecoveryTrace:
    """Estimates N_gamma(f_N, conj f_N) along ``N_list``; the last one is the point estimate."""
    if spec.mode != "gamma":
        raise ValueError("recover_gamma needs a gamma-mode probe spec")
    N_list = [float(n) for n in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be increasing")
    noise = oracle.noise
    K = noise.K if noise is not None else noise_truncation(spec, N_list[-1])
    trace = RecoveryTrace(truth=truth, theta=spec.theta, seed=None if noise is None else noise.seed,
                          probe={"xi_prime": spec.xi_prime, "C_P": spec.C_P, "mode": spec.mode})
    for N in N_list:
        f, fc = gamma_probe_pair(spec, N, K)
        key = (id(oracle.clean), N)
        if clean_cache is not None and key in clean_cache:
            clean = clean_cache[key]
        else:
            clean = oracle.clean.dn_pair(f, fc)
            if clean_cache is not None:
                clean_cache[key] = clean
        trace.append(N, clean, oracle.noise_part(f, fc))
    return trace


def gamma_noise_matrices(spec: ProbeSpec, N_list, K: int):
    """Coefficient rows (A, B) with noise_pair(f_N, conj f_N) = contract(A, B)[k]."""
    A, B = [], []
    for N in N_list:
        f, fc = gamma_probe_pair(spec, N, K)
        A.append(coefficients(f, K))
        B.append(coefficients(fc, K))
    return np.array(A), np.array(B)


# -- sample size planning ----------------------------------------------------------------
def _planner_sides(eps, theta, C, mode):
    # inputs are read as the decimals they print as, so eps=0.1 means exactly 1/10
    e, th, c = (mpmath.mpf(repr(float(v))) for v in (eps, theta, C))
    if mode == "gamma":
        return c**2 / e * (1 + th) / (1 - th), (1 - th) / (1 + th)
    if mode == "grad":
        return c / ((1 - th) * e), 1 - th
    raise ValueError("mode must be 'gamma' or 'grad'")


def planner_holds(N0: int, eps: float, theta: float, C: float, mode: str = "gamma") -> bool:
    """Strict tail criterion at N0; ties within working precision count as failures."""
    if N0 < 1:
        return False
    digits = len(str(int(N0))) + 40
    with mpmath.workdps(digits):
        lhs, q = _planner_sides(eps, theta, C, mode)
        rhs = mpmath.mpf(int(N0) - 1) ** q
        return bool(rhs - lhs > lhs * mpmath.mpf(10) ** (-(digits - 10)))


def plan_sample_size(eps: float, theta: float, C: float, mode: str = "gamma") -> int:
    """Smallest N0 meeting the tail criterion.

    gamma: (C^2/eps) (1+theta)/(1-theta) < (N0 - 1)^((1-theta)/(1+theta)).
    grad:  (N0 - 1)^(1-theta) > C / ((1-theta) eps).
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if not C > 0:
        raise ValueError("C must be positive")
    with mpmath.workdps(30):
        lhs, q = _planner_sides(eps, theta, C, mode)
        guess = lhs ** (1 / q)
    # working precision must resolve unit steps of n
    digits = int(mpmath.log10(guess + 1)) + 1 if guess > 1 else 1
    with mpmath.workdps(digits + 40):
        lhs, q = _planner_sides(eps, theta, C, mode)
        n = max(int(mpmath.floor(lhs ** (1 / q))) - 2, 0)
    # settle the boundary exactly: smallest N0 = n + 1 with (N0 - 1)^q > lhs
    while not planner_holds(n + 1, eps, theta, C, mode):
        n += 1
    return n + 1


def gamma_tail(C: float, theta: float, N0: int) -> float:
    """C^2 sum_{N >= N0} N^(-2/(1+theta)) (Hurwitz zeta)."""
    with mpmath.workdps(40):
        return float(mpmath.mpf(C) ** 2 * mpmath.zeta(mpmath.mpf(2) / (1 + mpmath.mpf(theta)), N0))


# -- rates -------------------------------------------------------------------------------
def fit_rate(points) -> tuple:
    """Least-squares slope and intercept of log(err) against log(N)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise ValueError("need at least 4 (N, err) points")
    N, err = pts[:, 0], pts[:, 1]
    if np.any(err <= 0) or np.any(N <= 0):
        raise ValueError("N and err must be positive")
    if np.ptp(N) == 0:
        raise ValueError("degenerate fit: all N equal")
    slope, intercept = np.polyfit(np.log(N), np.log(err), 1)
    return float(slope), float(intercept)


def rate_exponent(theta: float, mode: str = "gamma") -> float:
    return theta / (1.0 + theta) if mode == "gamma" else theta


def calibrate_constant(points, theta: float, mode: str = "gamma", factor: float = 3.0) -> float:
    """factor * max_N err(N) N^rate over noise-free points."""
    pts = np.asarray(points, dtype=float)
    r = rate_exponent(theta, mode)
    return float(factor * np.max(pts[:, 1] * pts[:, 0] ** r))


def quantile_experiment(clean: complex, noise_values, truth: float, N: float, theta: float,
                        C: float, mode: str = "gamma") -> float:
    """Fraction of seeds with |clean + noise - truth| <= C N^-rate."""
    radius = C * N ** (-rate_exponent(theta, mode))
    est = complex(clean) + np.asarray(noise_values, dtype=complex)
    return float(np.mean(np.abs(est - truth) <= radius))


def gamma_quantile_run(clean_oracle: CleanOracle, spec: ProbeSpec, N: float, seeds, truth: float,
                       C: float, K: Optional[int] = None, workers: Optional[int] = None):
    """Clean pairing once, noise per seed; returns (fraction, clean, noise values)."""
    K = K or noise_truncation(spec, N)
    f, fc = gamma_probe_pair(spec, N, K)
    clean = clean_oracle.dn_pair(f, fc)
    a, b = coefficients(f, K)[None], coefficients(fc, K)[None]
    noise = parallel_map(lambda s: sample_noise(s, K).contract(a, b)[0], list(seeds), workers)
    return quantile_experiment(clean, noise, truth, N, spec.theta, C, "gamma"), clean, np.array(noise)


# -- boundary derivatives ----------------------------------------------------------------
def window_length(N: float, theta: float, override="auto"):
    """(T, override_used).  ``override``: 'auto' (honest T_N for N <= 3, N^(3/2) above),
    'none' (always T_N) or a number."""
    T_full = float(N) ** (3.0 + 1.5 * theta)
    if override in (None, "none"):
        return T_full, None
    if override == "auto":
        if N <= 3:
            return T_full, None
        return float(N) ** 1.5, "N^1.5"
    T = float(override)
    if not T > 0:
        raise ValueError("override window must be positive")
    return T, f"T={T:g}"


def midpoint_nodes(T: float, Q: Optional[int] = None):
    """Composite midpoint rule on [T, 2T]: nodes and weights (sum of weights = T)."""
    if Q is None:
        Q = max(32, math.ceil(8 * T))
    h = T / Q
    return T + (np.arange(Q) + 0.5) * h, np.full(Q, h)


@dataclass
class GradRecovery:
    N: float
    T: float
    nodes: np.ndarray
    weights: np.ndarray
    clean_nodes: np.ndarray
    noise_nodes: np.ndarray
    override: Optional[str] = None
    target: Optional[complex] = None
    seed: Optional[int] = None

    @property
    def clean_average(self) -> complex:
        return complex(np.sum(self.weights * self.clean_nodes) / self.T)

    @property
    def noise_average(self) -> complex:
        return complex(np.sum(self.weights * self.noise_nodes) / self.T)

    @property
    def Y(self) -> complex:
        return self.clean_average + self.noise_average


def grad_target(gamma: ConductivityField, spec: ProbeSpec, normal: str = "outward") -> complex:
    """(d_nu gamma + i tau . grad gamma) / gamma at P.

    ``normal='outward'`` uses the outward normal; ``'inward'`` the inward one,
    which is the normal the averaged pairing actually converges against.
    """
    fr = spec.frame
    P = spec.chart.anchor
    nu = fr.normal if normal == "outward" else fr.inward
    g, dn, dt = gamma.boundary_data(P, nu, fr.tangent)
    return complex(dn, dt) / g


def grad_probe_pair(spec: ProbeSpec, t: float, gamma_boundary, K: Optional[int] = None):
    probe = grad_probe(spec, t)
    if K is None:
        K = truncation_rule(probe.N, spec.xi_prime, spec.domain.length, probe.M)
    n_b = probe_grid_size(K, probe.N, spec.xi_prime, spec.domain.length)
    f = probe.boundary_function(n_b=n_b)
    return f, pointwise_div(f.conj(), gamma_boundary)


def grad_clean_nodes(clean_oracle: CleanOracle, spec: ProbeSpec, nodes, gamma_boundary,
                     progress: Optional[Callable] = None) -> np.ndarray:
    """Seed-independent clean terms at each node (nodes processed in increasing t)."""
    out = np.empty(len(nodes), dtype=complex)
    for k in np.argsort(nodes, kind="stable"):
        probe = grad_probe(spec, float(nodes[k]))
        f = probe.boundary_function()
        out[k] = clean_oracle.grad_clean_term(f, gamma_boundary)
        if progress is not None:
            progress(k, out[k])
    return out


def grad_noise_matrices(spec: ProbeSpec, nodes, gamma_boundary, K: int):
    A, B = [], []
    for t in nodes:
        f, g = grad_probe_pair(spec, float(t), gamma_boundary, K)
        A.append(coefficients(f, K))
        B.append(coefficients(g, K))
    return np.array(A), np.array(B)


def grad_truncation(spec: ProbeSpec, T: float) -> int:
    t_max = 2.0 * T
    return truncation_rule(t_max**2, spec.xi_prime, spec.domain.length, t_max)


def recover_grad(oracle: NoisyOracle, spec: ProbeSpec, gamma_boundary, N: float,
                 Q: Optional[int] = None, T_override="auto", truth: Optional[complex] = None,
                 clean_nodes: Optional[np.ndarray] = None) -> GradRecovery:
    """Window average Y_N of the noisy derivative pairing; clean terms may be passed in."""
    if spec.mode != "grad":
        raise ValueError("recover_grad needs a grad-mode probe spec")
    T, used = window_length(N, spec.theta, T_override)
    nodes, weights = midpoint_nodes(T, Q)
    if clean_nodes is None:
        clean_nodes = grad_clean_nodes(oracle.clean, spec, nodes, gamma_boundary)
    noise_nodes = np.zeros(len(nodes), dtype=complex)
    if oracle.noise is not None:
        A, B = grad_noise_matrices(spec, nodes, gamma_boundary, oracle.noise.K)
        noise_nodes = oracle.noise.contract(A, B)
    return GradRecovery(float(N), T, nodes, weights, np.asarray(clean_nodes), noise_nodes, used,
                        truth, None if oracle.noise is None else oracle.noise.seed)


# -- noise window averaging --------------------------------------------------------------
def _chart_quadrature(spec: ProbeSpec, half_width: float, max_freq: float, order: int = 32):
    """Gauss-Legendre panels on |x'| <= half_width fine enough for frequency ``max_freq``."""
    panels = max(8, math.ceil(half_width * 2 * max_freq * abs(spec.xi_prime) / (2 * math.pi) * 2))
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-half_width, half_width, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    x = (0.5 * (b - a) * nodes + 0.5 * (a + b)).ravel()
    w = (0.5 * (b - a) * weights).ravel()
    chart = spec.chart
    ds = np.sqrt(1.0 + chart.dphi(x + chart.p_prime) ** 2)
    return x, w * ds


def filtering_gram(spec: ProbeSpec, T: float, gamma_boundary: Callable, Q: Optional[int] = None):
    """Covariance G_kl = (f_k|f_l)(g_k|g_l) of the node noise terms (untruncated basis).

    ``gamma_boundary`` maps global boundary points to conductivity values.
    """
    nodes, weights = midpoint_nodes(T, Q)
    x, w = _chart_quadrature(spec, 1.0 / nodes.min(), nodes.max() ** 2)
    chart = spec.chart
    pts = chart.to_global(np.stack([x + chart.p_prime, chart.phi(x + chart.p_prime)], axis=1))
    gb = np.asarray(gamma_boundary(pts), dtype=float)
    F = np.empty((len(nodes), len(x)), dtype=complex)
    for k, t in enumerate(nodes):
        F[k] = grad_probe(spec, float(t)).on_chart(x)
    Ff = F * w
    Gf = Ff @ F.conj().T                      # (f_k | f_l)
    # g = conj(f)/gamma, so (g_k|g_l) = int conj(f_k) f_l / gamma^2 = conj((f_k|f_l)_{gamma^-2})
    Gg = np.conj((F * (w / gb**2)) @ F.conj().T)
    return nodes, weights, Gf * Gg


def filtering_second_moment(spec: ProbeSpec, T: float, gamma_boundary: Callable,
                            Q: Optional[int] = None) -> float:
    """Closed form E|(1/T) sum_k w_k noise_k|^2 = w^T G w / T^2."""
    _, w, G = filtering_gram(spec, T, gamma_boundary, Q)
    return float(np.real(w @ G @ w)) / T**2


def filtering_moment(spec: ProbeSpec, T: float, gamma_boundary: Callable, seeds,
                     Q: Optional[int] = None, route: str = "gram", K: Optional[int] = None) -> tuple:
    """Monte-Carlo E|(1/T) int_T^{2T} noise_pair(f_t, conj(f_t)/gamma) dt|^2 over ``seeds``.

    route 'literal' contracts coefficient vectors against sampled K x K
    realizations (feasible for small T); route 'gram' draws the node noise
    vector, which is exactly complex Gaussian with covariance G, from per-seed
    streams.  Returns (mean, standard error).
    """
    seeds = [int(s) for s in seeds]
    if route == "literal":
        nodes, weights = midpoint_nodes(T, Q)
        K = K or grad_truncation(spec, T)

        def gb_angle(theta):
            return gamma_boundary(spec.domain.point(theta))

        A, B = grad_noise_matrices(spec, nodes, gb_angle, K)
        vals = np.array([weights @ sample_noise(s, K).contract(A, B) / T for s in seeds])
    elif route == "gram":
        _, weights, G = filtering_gram(spec, T, gamma_boundary, Q)
        # Z = w^T zeta / T with zeta ~ CN(0, G): a scalar CN(0, sigma^2)
        sigma2 = float(np.real(weights @ G @ weights)) / T**2
        vals = np.array([math.sqrt(sigma2) * _unit_cn(s, T) for s in seeds])
    else:
        raise ValueError("route must be 'literal' or 'gram'")
    p = np.abs(vals) ** 2
    return float(p.mean()), float(p.std(ddof=1) / math.sqrt(len(p))) if len(p) > 1 else 0.0


def _unit_cn(seed: int, T: float) -> complex:
    ss = np.random.SeedSequence([int(seed), int(round(T * 1e6)), 0xF117])
    u = np.random.Generator(np.random.Philox(ss)).random(2)
    return complex(complex_gaussian_from_uniforms(u)[0])


# -- stage 1 -> stage 2 ------------------------------------------------------------------
def trig_interpolant(thetas, values) -> Callable:
    """Periodic trigonometric interpolant through equispaced (theta_j, v_j)."""
    thetas = np.asarray(thetas, dtype=float)
    values = np.asarray(values, dtype=float)
    n = len(values)
    step = 2 * math.pi / n
    if not np.allclose(np.diff(np.mod(thetas - thetas[0], 2 * math.pi)), step, atol=1e-9):
        raise ValueError("anchor angles must be equispaced")
    c = np.fft.fft(values) / n
    k = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        c = c.copy()
        c[n // 2] *= 0.5
        c = np.append(c, c[n // 2])
        k = np.append(k, -k[n // 2])

    def f(theta):
        th = np.asarray(theta, dtype=float) - thetas[0]
        return np.real(np.exp(1j * np.multiply.outer(th, k)) @ c)

    return f


def stage_one_boundary(noisy: NoisyOracle, domain, n_anchors: int, N: float, theta: float = 0.5,
                       floor: Optional[float] = None) -> Callable:
    """Recover gamma at equispaced anchors and interpolate; a callable of the boundary angle."""
    anchors = np.arange(n_anchors) * (2 * math.pi / n_anchors)
    vals = []
    for th in anchors:
        chart = build_chart(domain, float(th))
        spec = ProbeSpec(chart, select_xi(chart), theta, "gamma")
        vals.append(recover_gamma(noisy, spec, [N]).final.real)
    interp = trig_interpolant(anchors, vals)
    lo = floor if floor is not None else 0.5 * min(vals)

    def gamma_b(theta_arr):
        return np.maximum(interp(theta_arr), lo)

    return gamma_b
