"""Analytic conductivity fields on the plane.

Fields are evaluated at global coordinates ``(x, y)`` and carry a lower bound
and regularity bounds valid on the disk of radius ``bound_radius`` (1.5 covers
every admissible domain, since ``|rho| < 1/2``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True, eq=False)
class ConductivityField:
    value: Callable
    gradient: Callable
    gamma0: float
    lipschitz: float
    c11: float
    tag: str
    params: dict = field(default_factory=dict)

    def __call__(self, x, y):
        return self.value(x, y)

    @property
    def is_constant(self) -> bool:
        return self.lipschitz == 0.0

    def at(self, X):
        X = np.asarray(X, dtype=float)
        return self.value(X[..., 0], X[..., 1])

    def grad_at(self, X):
        X = np.asarray(X, dtype=float)
        gx, gy = self.gradient(X[..., 0], X[..., 1])
        return np.stack(np.broadcast_arrays(gx, gy), axis=-1)

    def boundary_data(self, point, normal, tangent):
        """gamma(P), d_nu gamma(P) and tau.grad gamma(P) for unit vectors nu, tau."""
        g = float(self.at(point))
        grad = self.grad_at(point)
        return g, float(grad @ np.asarray(normal)), float(grad @ np.asarray(tangent))


def _vec(v, name):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (2,):
        raise ValueError(f"{name} must be a 2-vector")
    return v


def builtin_field(name: str, params: dict | None = None, bound_radius: float = 1.5) -> ConductivityField:
    """Library of analytic fields.

    ``constant``: value c.
    ``affine``: a + b.x.
    ``exponential``: c * exp(alpha.x).
    ``radial_bump``: base + amp * exp(-|x - center|^2 / width^2).
    ``trigonometric``: base + amp * sin(k.x + phase).
    """
    p = dict(params or {})
    R = float(bound_radius)
    if name == "constant":
        c = float(p.get("c", 1.0))

        def value(x, y):
            return np.full(np.broadcast(x, y).shape, c)

        def gradient(x, y):
            z = np.zeros(np.broadcast(x, y).shape)
            return z, z

        g0, lip, c11 = c, 0.0, 0.0
    elif name == "affine":
        a = float(p.get("a", 2.0))
        b = _vec(p.get("b", (1.0, 0.0)), "b")

        def value(x, y):
            return a + b[0] * np.asarray(x) + b[1] * np.asarray(y)

        def gradient(x, y):
            shape = np.broadcast(x, y).shape
            return np.full(shape, b[0]), np.full(shape, b[1])

        nb = float(np.hypot(*b))
        g0, lip, c11 = a - nb * R, nb, 0.0
    elif name == "exponential":
        c = float(p.get("c", 1.0))
        al = _vec(p.get("alpha", (0.0, 1.0)), "alpha")
        na = float(np.hypot(*al))

        def value(x, y):
            return c * np.exp(al[0] * np.asarray(x) + al[1] * np.asarray(y))

        def gradient(x, y):
            v = value(x, y)
            return al[0] * v, al[1] * v

        top = abs(c) * np.exp(na * R)
        g0, lip, c11 = min(c * np.exp(-na * R), c * np.exp(na * R)), na * top, na**2 * top
    elif name == "radial_bump":
        base = float(p.get("base", 1.0))
        amp = float(p.get("amp", 0.5))
        w = float(p.get("width", 0.5))
        ctr = _vec(p.get("center", (0.0, 0.0)), "center")

        def value(x, y):
            r2 = (np.asarray(x) - ctr[0]) ** 2 + (np.asarray(y) - ctr[1]) ** 2
            return base + amp * np.exp(-r2 / w**2)

        def gradient(x, y):
            dx, dy = np.asarray(x) - ctr[0], np.asarray(y) - ctr[1]
            e = amp * np.exp(-(dx**2 + dy**2) / w**2)
            return -2 * dx / w**2 * e, -2 * dy / w**2 * e

        g0 = base + min(amp, 0.0)
        lip = abs(amp) * np.sqrt(2.0) / w * np.exp(-0.5)
        c11 = abs(amp) * 2.0 / w**2
    elif name == "trigonometric":
        base = float(p.get("base", 2.0))
        amp = float(p.get("amp", 0.5))
        k = _vec(p.get("k", (1.0, 1.0)), "k")
        ph = float(p.get("phase", 0.0))
        nk = float(np.hypot(*k))

        def value(x, y):
            return base + amp * np.sin(k[0] * np.asarray(x) + k[1] * np.asarray(y) + ph)

        def gradient(x, y):
            c = amp * np.cos(k[0] * np.asarray(x) + k[1] * np.asarray(y) + ph)
            return k[0] * c, k[1] * c

        g0, lip, c11 = base - abs(amp), abs(amp) * nk, abs(amp) * nk**2
    else:
        raise ValueError(f"unknown conductivity {name!r}")

    if not g0 > 0:
        raise ValueError(f"{name} field with {p} is not bounded below by a positive constant")
    return ConductivityField(value=value, gradient=gradient, gamma0=float(g0),
                             lipschitz=float(lip), c11=float(c11), tag=name, params=p)


UNIT = builtin_field("constant", {"c": 1.0})
