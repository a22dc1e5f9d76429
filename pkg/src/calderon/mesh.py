"""Graded triangular meshes that resolve oscillating boundary data near a point.

Boundary vertices are placed exactly on the curve, spaced by the local size
function; the interior is filled by Shewchuk's Triangle (quality bound 30 deg,
no Steiner points on the boundary) and refined until every triangle meets its
size target.

Two grading modes are available:

* ``zone``: size ``h_near`` on the disk of radius ``r_refine`` about P,
  growing linearly (slope ``grading``) to ``h_far`` outside it;
* ``layer``: size ``h_near`` only in a boundary layer of depth ``layer``
  along the arc within ``r_refine`` of P.  Oscillating Dirichlet data of
  frequency N produce solutions decaying like ``exp(-N depth)``, so this
  keeps the element count near-linear in N instead of quadratic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import triangle
from scipy.spatial import cKDTree

from .geometry import DomainGeometry

DEFAULT_MAX_TRIANGLES = 2_000_000
MIN_ANGLE = 30.0
BOUNDARY_DENSITY = 1.8
_TRI_AREA = math.sqrt(3.0) / 4.0


class MeshBudgetError(RuntimeError):
    """The requested resolution needs more triangles than the cap allows."""

    def __init__(self, message, required_triangles=None, h_near_feasible=None):
        super().__init__(message)
        self.required_triangles = required_triangles
        self.h_near_feasible = h_near_feasible


@dataclass(frozen=True)
class SizeField:
    h_far: float
    h_near: float
    P: Optional[np.ndarray] = None
    r_refine: float = 0.0
    grading: float = 0.3
    layer: Optional[float] = None

    def tangential_excess(self, dist_P):
        if self.P is None:
            return np.full(np.shape(dist_P), np.inf)
        return np.maximum(np.asarray(dist_P) - self.r_refine, 0.0)

    def size(self, dist_P, depth):
        """Target diameter given distance to P and depth below the boundary."""
        if self.P is None:
            return np.full(np.shape(dist_P), self.h_far)
        ex = self.tangential_excess(dist_P)
        if self.layer is not None:
            ex = np.hypot(ex, np.maximum(np.asarray(depth) - self.layer, 0.0))
        return np.minimum(self.h_far, self.h_near + self.grading * ex)

    def describe(self) -> dict:
        d = {"mode": "layer" if self.layer is not None else "zone", "h_far": self.h_far,
             "h_near": self.h_near, "r_refine": self.r_refine, "grading": self.grading}
        if self.P is not None:
            d["P"] = [float(v) for v in self.P]
        if self.layer is not None:
            d["layer"] = self.layer
        return d


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray          # vertex indices, counter-clockwise
    boundary_theta: np.ndarray    # boundary angle of each boundary vertex
    domain: DomainGeometry
    grading: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def key(self) -> tuple:
        """Hashable identity used by factorization caches."""
        return (id(self), self.n_vertices, self.n_triangles)

    def corners(self):
        V = self.vertices
        T = self.triangles
        return V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]

    def signed_areas(self):
        a, b, c = self.corners()
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def areas(self):
        return np.abs(self.signed_areas())

    def edge_lengths(self):
        a, b, c = self.corners()
        return np.stack([np.linalg.norm(c - b, axis=1), np.linalg.norm(a - c, axis=1),
                         np.linalg.norm(b - a, axis=1)], axis=1)

    def diameters(self):
        return self.edge_lengths().max(axis=1)

    def min_angles(self):
        """Smallest interior angle of each triangle, degrees."""
        L = self.edge_lengths()
        la, lb, lc = L[:, 0], L[:, 1], L[:, 2]
        ca = np.clip((lb**2 + lc**2 - la**2) / (2 * lb * lc), -1, 1)
        cb = np.clip((la**2 + lc**2 - lb**2) / (2 * la * lc), -1, 1)
        cc = np.clip((la**2 + lb**2 - lc**2) / (2 * la * lb), -1, 1)
        return np.degrees(np.arccos(np.stack([ca, cb, cc], axis=1))).min(axis=1)

    def boundary_points(self):
        return self.vertices[self.boundary]

    def interior_mask(self):
        m = np.ones(self.n_vertices, dtype=bool)
        m[self.boundary] = False
        return m

    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    def distance_to(self, P):
        """Distance from P to each triangle (0 if P lies inside)."""
        return _point_triangle_distance(np.asarray(P, float), *self.corners())

    def is_conforming(self) -> bool:
        """Every interior edge is shared by exactly two triangles, boundary edges by one."""
        T = self.triangles
        E = np.sort(np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]]), axis=1)
        _, counts = np.unique(E, axis=0, return_counts=True)
        if np.any(counts > 2):
            return False
        # boundary edges are exactly the consecutive boundary vertices
        b = self.boundary
        bE = np.sort(np.stack([b, np.roll(b, -1)], axis=1), axis=1)
        uniq, counts = np.unique(E, axis=0, return_counts=True)
        single = {tuple(e) for e in uniq[counts == 1]}
        return single == {tuple(e) for e in bE}

    def write_ascii(self, path) -> None:
        """Node/element dump.

        Section ``nodes``: ``index x y is_boundary theta`` (theta is NaN inside).
        Section ``elements``: ``index v0 v1 v2 diameter``, vertices counter-clockwise.
        """
        theta = np.full(self.n_vertices, np.nan)
        theta[self.boundary] = self.boundary_theta
        isb = ~self.interior_mask()
        diam = self.diameters()
        with open(path, "w") as fh:
            fh.write(f"# nodes {self.n_vertices}\n# index x y is_boundary theta\n")
            for i, (x, y) in enumerate(self.vertices):
                fh.write(f"{i} {x:.17g} {y:.17g} {int(isb[i])} {theta[i]:.17g}\n")
            fh.write(f"# elements {self.n_triangles}\n# index v0 v1 v2 diameter\n")
            for k, (a, b, c) in enumerate(self.triangles):
                fh.write(f"{k} {a} {b} {c} {diam[k]:.17g}\n")


def _point_triangle_distance(P, A, B, C):
    def seg(a, b):
        ab = b - a
        t = np.clip(((P - a) * ab).sum(1) / np.maximum((ab * ab).sum(1), 1e-300), 0, 1)
        return np.linalg.norm(a + t[:, None] * ab - P, axis=1)

    d = np.minimum(np.minimum(seg(A, B), seg(B, C)), seg(C, A))

    def cross(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    s1, s2, s3 = cross(B - A, P - A), cross(C - B, P - B), cross(A - C, P - C)
    inside = ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))
    d[inside] = 0.0
    return d


def required_resolution(N: float, xi_prime: float, ppw: float, h_far: float = 0.1,
                        M: Optional[float] = None):
    """(h_near, r_refine) resolving exp(i N xi' x') with ``ppw`` points per wavelength.

    ``M`` is the envelope scale of the probe (support |x'| <= 1/M); it defaults
    to sqrt(N).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if ppw < 4:
        raise ValueError("ppw must be >= 4")
    if M is None:
        M = math.sqrt(N)
    h_near = min(2.0 * math.pi / (N * abs(xi_prime) * ppw), h_far)
    return h_near, 2.0 / M + h_far


def _boundary_vertices(domain: DomainGeometry, sf: SizeField, max_boundary: int):
    """Arclength-equidistributed (in 1/h) boundary angles, ccw, starting near theta=0."""
    L = domain.length
    h_min = sf.h_near if sf.P is not None else sf.h_far
    n_fine = int(min(max(20000, math.ceil(8 * L / h_min)), 4 * max_boundary + 20000))
    s = np.arange(n_fine + 1) * (L / n_fine)
    theta = domain.theta_of_s(s[:-1])
    pts = domain.point(theta)
    if sf.P is not None:
        dP = np.linalg.norm(pts - sf.P, axis=1)
    else:
        dP = np.zeros(n_fine)
    dens = 1.0 / sf.size(dP, np.zeros(n_fine))
    dens = np.append(dens, dens[0])
    Phi = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s))])
    # boundary edges at ~0.55 h keep every 30-degree triangle on a boundary edge within h
    n_edges = max(int(math.ceil(BOUNDARY_DENSITY * Phi[-1])), 16)
    if n_edges > max_boundary:
        raise MeshBudgetError(f"boundary needs {n_edges} vertices (cap {max_boundary})",
                              required_triangles=None)
    targets = np.arange(n_edges) * (Phi[-1] / n_edges)
    sb = np.interp(targets, Phi, s)
    # anchor one vertex on P when present so the probe centre is a mesh node
    if sf.P is not None:
        th_all = domain.theta_of_s(sb)
        k = int(np.argmin(np.linalg.norm(domain.point(th_all) - sf.P, axis=1)))
        sP = _arclength_of_point(domain, sf.P)
        sb = np.mod(sb + (sP - sb[k]), L)
        sb = np.sort(sb)
    th = domain.theta_of_s(sb)
    return th, (pts, dens)


def _arclength_of_point(domain, P):
    theta = math.atan2(P[1], P[0])
    return float(np.mod(domain.arclength(theta), domain.length))


def _budget_message(sf, estimate, cap):
    feasible = sf.h_near * math.sqrt(estimate / cap) if estimate and sf.P is not None else None
    msg = (f"mesh needs about {estimate:.3g} triangles, above the cap {cap:.3g}; "
           f"h_near={sf.h_near:.3g}")
    if feasible is not None:
        msg += f" (required h_near >= {feasible:.3g} at this cap, or raise the cap)"
    return MeshBudgetError(msg, required_triangles=estimate, h_near_feasible=feasible)


def generate_mesh(domain: DomainGeometry, h_far: float, h_near: Optional[float] = None,
                  P=None, r_refine: float = 0.0, *, grading: float = 0.3,
                  layer: Optional[float] = None, max_triangles: int = DEFAULT_MAX_TRIANGLES,
                  max_passes: int = 80) -> TriMesh:
    """Triangulate ``domain`` with diameters <= h_far, and <= h_near near P."""
    if h_near is None:
        h_near = h_far
    if not (0 < h_near <= h_far):
        raise ValueError("need 0 < h_near <= h_far")
    if P is not None and not r_refine > 0:
        raise ValueError("r_refine must be positive")
    if not 0 < grading <= 1:
        raise ValueError("grading slope must lie in (0, 1]")
    Pa = None if P is None else np.asarray(P, dtype=float)
    sf = SizeField(float(h_far), float(h_near), Pa, float(r_refine), float(grading),
                   None if layer is None else float(layer))

    th, (fine_pts, _) = _boundary_vertices(domain, sf, max_triangles)
    Vb = domain.point(th)
    nb = len(Vb)
    seg = np.stack([np.arange(nb), (np.arange(nb) + 1) % nb], axis=1)
    # depth only matters where the size has not saturated at h_far; the nearest
    # boundary point of such a point lies within twice that reach of P
    reach = None
    tree = None
    if sf.P is not None and sf.layer is not None:
        reach = sf.r_refine + (sf.h_far - sf.h_near) / sf.grading + 2.0 * sf.h_far
        near = np.linalg.norm(fine_pts - sf.P, axis=1) <= 2.0 * reach
        tree = cKDTree(fine_pts[near])

    def depth(X):
        d = np.full(len(X), np.inf)
        m = np.linalg.norm(X - sf.P, axis=1) <= reach
        if m.any():
            cap = sf.layer + (sf.h_far - sf.h_near) / sf.grading + 2.0 * sf.h_far
            d[m] = tree.query(X[m], distance_upper_bound=cap)[0]
        return d

    def targets(V, T):
        """Diameters, conservative size bound (badness test) and centroid size (area goal)."""
        A, B, C = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
        diam = np.maximum(np.maximum(np.linalg.norm(B - A, axis=1), np.linalg.norm(C - B, axis=1)),
                          np.linalg.norm(A - C, axis=1))
        if sf.P is None:
            h = np.full(len(T), sf.h_far)
            return diam, h, h
        dP = _point_triangle_distance(sf.P, A, B, C)
        if sf.layer is None:
            h = sf.size(dP, 0.0)
            return diam, h, h
        dv = depth(V)
        lower = sf.size(dP, np.maximum(dv[T].min(axis=1) - diam, 0.0))
        centre = sf.size(dP, depth((A + B + C) / 3.0))
        return diam, lower, np.maximum(centre, lower)

    # coarse fill with the far size, then refine against local targets
    t = triangle.triangulate(dict(vertices=Vb, segments=seg),
                             f"pq{MIN_ANGLE:g}Ya{0.5 * _TRI_AREA * h_far**2:.17g}")
    for _ in range(max_passes):
        V, T = t["vertices"], t["triangles"]
        diam, tgt, goal = targets(V, T)
        bad = diam > tgt
        if not bad.any():
            break
        area = _TRI_AREA * 0.5 * goal**2
        tri_area = np.abs(0.5 * ((V[T[:, 1], 0] - V[T[:, 0], 0]) * (V[T[:, 2], 1] - V[T[:, 0], 1])
                                 - (V[T[:, 1], 1] - V[T[:, 0], 1]) * (V[T[:, 2], 0] - V[T[:, 0], 0])))
        estimate = float(len(T) + np.sum(np.maximum(tri_area[bad] / area[bad] - 1.0, 0.0)))
        if estimate > max_triangles:
            raise _budget_message(sf, estimate, max_triangles)
        # an area cap alone does not bound the diameter of obtuse triangles
        max_area = np.where(bad, np.minimum(area, 0.5 * tri_area), -1.0)
        t = triangle.triangulate(dict(vertices=V, triangles=T, segments=t["segments"],
                                      triangle_max_area=max_area), f"rpq{MIN_ANGLE:g}Ya")
        if len(t["triangles"]) > max_triangles:
            raise _budget_message(sf, float(len(t["triangles"])), max_triangles)
    else:
        raise RuntimeError("mesh refinement did not converge")

    V = np.ascontiguousarray(t["vertices"], dtype=float)
    T = np.ascontiguousarray(t["triangles"], dtype=np.int64)
    # Triangle keeps input vertices first; Y forbids new ones on the boundary
    V[:nb] = Vb
    a = 0.5 * ((V[T[:, 1], 0] - V[T[:, 0], 0]) * (V[T[:, 2], 1] - V[T[:, 0], 1])
               - (V[T[:, 1], 1] - V[T[:, 0], 1]) * (V[T[:, 2], 0] - V[T[:, 0], 0]))
    flip = a < 0
    T[flip] = T[flip][:, [0, 2, 1]]
    return TriMesh(V, T, np.arange(nb), np.asarray(th, dtype=float), domain, sf.describe())


def probe_mesh(domain: DomainGeometry, P, N: float, xi_prime: float, M: float, *,
               ppw: float = 10.0, h_far: float = 0.1, layer_factor: Optional[float] = 8.0,
               grading: float = 0.3, max_triangles: int = DEFAULT_MAX_TRIANGLES) -> TriMesh:
    """Mesh resolving a probe of frequency N |xi'| and envelope 1/M centred at P.

    ``layer_factor=None`` gives the zone grading; otherwise the fine layer has
    depth ``layer_factor / (N |xi'|)``.
    """
    h_near, r_refine = required_resolution(N, xi_prime, ppw, h_far, M)
    layer = None if layer_factor is None else layer_factor / (N * abs(xi_prime))
    return generate_mesh(domain, h_far, h_near, P, r_refine, grading=grading, layer=layer,
                         max_triangles=max_triangles)
