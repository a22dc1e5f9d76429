"""Complex functions on the boundary: quadrature, inner products, Fourier basis.

Functions are sampled on a uniform arclength grid ``s_j = j L / n_b``.  The
orthonormal basis is ``e_n(s) = L^{-1/2} exp(2 pi i n s / L)`` ordered as
``n = 0, +1, -1, +2, -2, ...``; basis index ``i`` therefore holds
``n = (i + 1) // 2`` for odd ``i`` and ``n = -i // 2`` for even ``i``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import DomainGeometry

TAIL_WARN = 1e-3
TAIL_ERROR = 1e-2


class ResolutionError(ValueError):
    """The sample grid or truncation cannot represent the function."""


class UnderResolvedWarning(UserWarning):
    pass


def index_to_mode(i):
    i = np.asarray(i)
    return np.where(i % 2 == 1, (i + 1) // 2, -(i // 2))


def mode_to_index(n):
    n = np.asarray(n)
    return np.where(n > 0, 2 * n - 1, -2 * n)


def modes_needed(n_max: int) -> int:
    """Truncation K whose ordering covers every |n| <= n_max."""
    return 2 * int(n_max) + 1


@dataclass(frozen=True)
class BoundaryBasis:
    length: float
    K: int

    @property
    def modes(self):
        return index_to_mode(np.arange(self.K))

    def evaluate(self, i, s):
        n = index_to_mode(i)
        return np.exp(2j * np.pi * n * np.asarray(s) / self.length) / np.sqrt(self.length)

    def function(self, domain: DomainGeometry, i: int, n_b: int) -> "BoundaryFunction":
        n = int(index_to_mode(i))
        L = domain.length

        def f(theta):
            return np.exp(2j * np.pi * n * domain.arclength(theta) / L) / np.sqrt(L)

        return BoundaryFunction.from_callable(domain, f, n_b, meta={"bandwidth": abs(n)})


class BoundaryFunction:
    """Samples of a complex function on the uniform arclength grid of ``domain``.

    ``func``, when present, evaluates the function exactly at arbitrary boundary
    angles; otherwise traces are obtained by periodic cubic interpolation.
    ``meta`` carries localization hints (probe data) used to pick meshes.
    """

    def __init__(self, domain: DomainGeometry, samples, func: Optional[Callable] = None,
                 meta: Optional[dict] = None):
        self.domain = domain
        self.samples = np.asarray(samples, dtype=complex)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        self.func = func
        self.meta = dict(meta or {})
        self._coeff_cache: dict = {}

    @classmethod
    def from_callable(cls, domain, func, n_b, meta=None):
        _, theta, _ = domain.boundary_grid(n_b)
        return cls(domain, np.asarray(func(theta), dtype=complex) * np.ones(n_b), func, meta)

    @classmethod
    def from_global(cls, domain, func_xy, n_b, meta=None):
        """Build from a function of global coordinates (x, y)."""

        def f(theta):
            X = domain.point(theta)
            return np.asarray(func_xy(X[..., 0], X[..., 1]), dtype=complex)

        return cls.from_callable(domain, f, n_b, meta)

    @classmethod
    def fourier_mode(cls, domain, n, n_b):
        """exp(i n theta) (not normalized; angle-based, equals arclength-based on the disk)."""
        return cls.from_callable(domain, lambda th: np.exp(1j * n * np.asarray(th)), n_b,
                                 meta={"bandwidth": abs(n)})

    @property
    def n_b(self) -> int:
        return self.samples.size

    @property
    def weight(self) -> float:
        return self.domain.length / self.n_b

    def grid(self):
        return self.domain.boundary_grid(self.n_b)

    def at(self, theta):
        """Trace values at boundary angles ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if self.func is not None:
            return np.asarray(self.func(theta), dtype=complex) * np.ones(theta.shape)
        L = self.domain.length
        s_grid = np.arange(self.n_b + 1) * self.weight
        vals = np.append(self.samples, self.samples[0])
        spl = CubicSpline(s_grid, vals, bc_type="periodic")
        return spl(np.mod(self.domain.arclength(theta), L))

    def check_trace_resolution(self, n_vertices: int):
        if self.func is None and self.n_b < 2 * n_vertices:
            raise ResolutionError(
                f"{self.n_b} samples cannot be interpolated to {n_vertices} boundary vertices;"
                " need at least twice the vertex count")

    # -- algebra ---------------------------------------------------------------------
    def _compatible(self, other):
        if not isinstance(other, BoundaryFunction):
            return False
        if other.domain != self.domain or other.n_b != self.n_b:
            raise ValueError("boundary functions live on different grids")
        return True

    def _combine(self, other, op):
        if self._compatible(other):
            f, g = self.func, other.func
            func = (lambda th: op(f(th), g(th))) if f is not None and g is not None else None
            return BoundaryFunction(self.domain, op(self.samples, other.samples), func,
                                    _merge_meta(self.meta, other.meta))
        c = complex(other)
        f = self.func
        func = (lambda th: op(f(th), c)) if f is not None else None
        return BoundaryFunction(self.domain, op(self.samples, c), func, self.meta)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def conj(self) -> "BoundaryFunction":
        f = self.func
        func = (lambda th: np.conj(f(th))) if f is not None else None
        return BoundaryFunction(self.domain, np.conj(self.samples), func, self.meta)

    def norm(self) -> float:
        return float(np.sqrt(inner(self, self).real))

    # -- spectral data ---------------------------------------------------------------
    def all_coefficients(self):
        """(f|e_n) for every FFT mode, in FFT order."""
        if "fft" not in self._coeff_cache:
            L = self.domain.length
            self._coeff_cache["fft"] = np.fft.fft(self.samples) * (np.sqrt(L) / self.n_b)
        return self._coeff_cache["fft"]


def _merge_meta(a, b):
    out = dict(b)
    out.update(a)
    return out


def inner(f: BoundaryFunction, g: BoundaryFunction) -> complex:
    """(f|g) = int_{dD} f conj(g) ds by the periodic trapezoid rule."""
    f._compatible(g)
    return complex(np.sum(f.samples * np.conj(g.samples)) * f.weight)


def coefficients(f: BoundaryFunction, K: int) -> np.ndarray:
    """a_i = (f|e_i) for i < K in the interleaved ordering."""
    K = int(K)
    if K < 1:
        raise ValueError("K must be positive")
    if f.n_b < 4 * K:
        raise ResolutionError(f"grid of {f.n_b} samples is too coarse for K={K} (need n_b >= 4K)")
    key = ("trunc", K)
    if key in f._coeff_cache:
        return f._coeff_cache[key]
    c = f.all_coefficients()
    a = c[np.mod(index_to_mode(np.arange(K)), f.n_b)]
    total = float(np.sum(np.abs(c) ** 2))
    if total > 0:
        tail = max(total - float(np.sum(np.abs(a) ** 2)), 0.0) / total
        if tail > TAIL_ERROR:
            raise ResolutionError(f"truncation K={K} misses {tail:.2e} of the L2 mass")
        if tail > TAIL_WARN:
            warnings.warn(f"truncation K={K} misses {tail:.2e} of the L2 mass",
                          UnderResolvedWarning, stacklevel=2)
    f._coeff_cache[key] = a
    return a


def pointwise_div(f: BoundaryFunction, gamma_boundary) -> BoundaryFunction:
    """Divide samples by a positive boundary function.

    ``gamma_boundary`` may be a conductivity field, a callable of the boundary
    angle, a real :class:`BoundaryFunction` or an array of samples.
    """
    _, theta, X = f.grid()
    if hasattr(gamma_boundary, "gamma0") and hasattr(gamma_boundary, "at"):
        field = gamma_boundary
        div = np.asarray(field.at(X), dtype=float)

        def gfun(th):
            return field.at(f.domain.point(th))
    elif isinstance(gamma_boundary, BoundaryFunction):
        f._compatible(gamma_boundary)
        div = gamma_boundary.samples
        if np.any(np.abs(div.imag) > 0):
            raise ValueError("divisor must be real")
        div = div.real
        gfun = (lambda th: gamma_boundary.at(th).real) if gamma_boundary.func is not None else None
    elif callable(gamma_boundary):
        gfun = gamma_boundary
        div = np.asarray(gamma_boundary(theta), dtype=float)
    else:
        div = np.asarray(gamma_boundary, dtype=float)
        if div.shape != f.samples.shape:
            raise ValueError("divisor samples do not match the grid")
        gfun = None
    if np.any(~(div > 0)):
        raise ValueError("divisor must be strictly positive on the grid")
    func = None
    if f.func is not None and gfun is not None:
        fn = f.func
        func = lambda th: fn(th) / gfun(th)  # noqa: E731
    return BoundaryFunction(f.domain, f.samples / div, func, f.meta)


def probe_grid_size(K: int, N: float, xi_prime: float, length: float) -> int:
    """n_b = 8 max(K, ceil(N |xi'| L / 2 pi)) for probe experiments."""
    return 8 * max(int(K), int(np.ceil(N * abs(xi_prime) * length / (2 * np.pi))))
