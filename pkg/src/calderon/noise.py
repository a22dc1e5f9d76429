"""Frozen white-noise realizations and the corrupted bilinear form.

Entry ``X[i, j]`` is drawn from a Philox stream keyed by ``(seed, i)``: it
consumes the stream's uniforms ``2j`` and ``2j + 1`` and maps them to a
circularly-symmetric complex Gaussian (real and imaginary parts independent
N(0, 1/2)).  The value therefore depends on ``(seed, i, j)`` only, and
enlarging ``K`` extends a realization without touching existing entries.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .boundary import BoundaryFunction, coefficients, modes_needed


def _row_uniforms(seed: int, i: int, count: int) -> np.ndarray:
    bitgen = np.random.Philox(np.random.SeedSequence([int(seed), int(i)]))
    return np.random.Generator(bitgen).random(2 * count)


def complex_gaussian_from_uniforms(u: np.ndarray) -> np.ndarray:
    """Pairs of uniforms -> CN(0, 1): |X|^2 ~ Exp(1), independent uniform phase."""
    u1, u2 = u[0::2], u[1::2]
    return np.sqrt(-np.log1p(-u1)) * np.exp(2j * np.pi * u2)


ROW_BLOCK = 256


class NoiseRealization:
    """Frozen K x K realization.  Rows are regenerated on demand from ``seed``
    (or read from an explicit array), so large K never needs the full matrix."""

    def __init__(self, seed: int, K: int, X: Optional[np.ndarray] = None):
        if K < 1:
            raise ValueError("K must be positive")
        self.seed = int(seed)
        self.K = int(K)
        if X is not None:
            X = np.asarray(X, dtype=complex)
            if X.shape != (self.K, self.K):
                raise ValueError("explicit realization must be K x K")
        self._X = X

    @property
    def is_zero(self) -> bool:
        return self._X is not None and not np.any(self._X)

    def rows(self, i0: int, i1: int) -> np.ndarray:
        if self._X is not None:
            return self._X[i0:i1]
        return np.stack([complex_gaussian_from_uniforms(_row_uniforms(self.seed, i, self.K))
                         for i in range(i0, i1)])

    @property
    def X(self) -> np.ndarray:
        if self._X is None:
            self._X = self.rows(0, self.K)
        return self._X

    def entry(self, i: int, j: int) -> complex:
        return complex(self.rows(i, i + 1)[0, j])

    def contract(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """sum_ij A[k, i] X_ij B[k, j] for every row k of the coefficient matrices."""
        A = np.atleast_2d(np.asarray(A, dtype=complex))
        B = np.atleast_2d(np.asarray(B, dtype=complex))
        if A.shape[1] != self.K or B.shape[1] != self.K:
            raise ValueError("coefficient vectors do not match the truncation K")
        out = np.zeros(A.shape[0], dtype=complex)
        if self.is_zero:
            return out
        BT = B.T
        for i0 in range(0, self.K, ROW_BLOCK):
            i1 = min(i0 + ROW_BLOCK, self.K)
            out += np.einsum("ki,ik->k", A[:, i0:i1], self.rows(i0, i1) @ BT)
        return out


def sample_noise(seed: int, K: int) -> NoiseRealization:
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return NoiseRealization(seed, K)


def zero_noise(K: int) -> NoiseRealization:
    return NoiseRealization(-1, K, np.zeros((K, K), dtype=complex))


def noise_pair(noise: NoiseRealization, f: BoundaryFunction, g: BoundaryFunction) -> complex:
    """sum_{i,j<K} (f|e_i) (g|e_j) X_ij."""
    a = coefficients(f, noise.K)
    b = coefficients(g, noise.K)
    return complex(noise.contract(a[None], b[None])[0])


def noise_contraction(noise: NoiseRealization, C: np.ndarray) -> complex:
    """sum_ij X_ij C_ij for a precomputed coefficient matrix."""
    return complex(np.sum(noise.X * C))


def second_moment(f: BoundaryFunction, g: BoundaryFunction, K: int) -> float:
    """Closed-form E|noise_pair(f, g)|^2 on the truncated space: |a|^2 |b|^2."""
    a = coefficients(f, K)
    b = coefficients(g, K)
    return float(np.sum(np.abs(a) ** 2) * np.sum(np.abs(b) ** 2))


def truncation_rule(N_max: float, xi_prime: float, length: float, M: Optional[float] = None) -> int:
    """K whose ordering covers |n| <= ceil(2 N_max |xi'| L / 2 pi) + 32.

    With the envelope scale ``M`` the cover is widened to the carrier plus 16 M
    (the cutoff leaves about 3.5e-4 of its L2 mass outside that band).
    """
    scale = length / (2.0 * math.pi)
    n_cover = math.ceil(2.0 * N_max * abs(xi_prime) * scale)
    if M is not None:
        n_cover = max(n_cover, math.ceil((N_max * abs(xi_prime) + 16.0 * M) * scale))
    return modes_needed(n_cover + 32)


class NoisyOracle:
    """Clean DN pairing plus one frozen noise realization (or none)."""

    def __init__(self, clean, noise: Optional[NoiseRealization] = None):
        self.clean = clean
        self.noise = noise

    def noise_part(self, f, g) -> complex:
        if self.noise is None:
            return 0j
        return noise_pair(self.noise, f, g)

    def measure(self, f, g):
        """(clean, noise) parts of one measurement."""
        return self.clean.dn_pair(f, g), self.noise_part(f, g)

    def noisy_pair(self, f, g) -> complex:
        c, n = self.measure(f, g)
        return c + n
