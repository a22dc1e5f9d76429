"""P1 finite elements for div(gamma grad u) = 0 and the clean DN pairings.

The pairing of two boundary functions is the energy ``u_f^T K_gamma u_g`` of
their discrete gamma-harmonic extensions (bilinear, not conjugated).  Complex
data are split into real and imaginary columns so every solve is real SPD.
"""
from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .boundary import BoundaryFunction, pointwise_div
from .conductivity import UNIT, ConductivityField
from .geometry import DomainGeometry
from .mesh import DEFAULT_MAX_TRIANGLES, TriMesh, generate_mesh, probe_mesh
from .probes import ProbeSpec, eta, gamma_probe

RESIDUAL_TOL = 1e-10
DIRECT_LIMIT = 1_500_000   # interior unknowns above which CG + AMG is used


class SolverError(RuntimeError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


def _p1_gradients(mesh: TriMesh):
    """Barycentric gradients (n_t, 3, 2) and triangle areas."""
    a, b, c = mesh.corners()
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    G = np.empty((mesh.n_triangles, 3, 2))
    for k, (p, q) in enumerate(((b, c), (c, a), (a, b))):
        e = q - p
        G[:, k, 0] = -e[:, 1] / area2
        G[:, k, 1] = e[:, 0] / area2
    return G, 0.5 * area2


def midpoint_values(mesh: TriMesh, field: ConductivityField):
    """Field values at the three edge midpoints of every triangle, (n_t, 3)."""
    V, T = mesh.vertices, mesh.triangles
    mids = 0.5 * (V[T[:, [1, 2, 0]]] + V[T[:, [2, 0, 1]]])
    return np.asarray(field.at(mids), dtype=float) * np.ones(mids.shape[:2])


def assemble_stiffness(mesh: TriMesh, gamma: ConductivityField = UNIT) -> sp.csr_matrix:
    """K_ij = int gamma grad phi_i . grad phi_j; gamma by the edge-midpoint rule (exact for affine gamma)."""
    G, area = _p1_gradients(mesh)
    gbar = midpoint_values(mesh, gamma).mean(axis=1)
    local = np.einsum("tid,tjd->tij", G, G) * (gbar * area)[:, None, None]
    T = mesh.triangles
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_mass(mesh: TriMesh) -> sp.csr_matrix:
    area = mesh.areas()
    local = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
    T = mesh.triangles
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


class DirichletSolver:
    """Factorized interior block of K for one (mesh, conductivity)."""

    def __init__(self, mesh: TriMesh, gamma: ConductivityField = UNIT):
        self.mesh = mesh
        self.gamma = gamma
        self.K = assemble_stiffness(mesh, gamma)
        self.interior = np.flatnonzero(mesh.interior_mask())
        self.bnd = np.asarray(mesh.boundary)
        K = self.K.tocsr()
        self.K_II = K[self.interior][:, self.interior].tocsc()
        self.K_IB = K[self.interior][:, self.bnd].tocsr()
        self._lu = None
        self._amg = None
        if len(self.interior) <= DIRECT_LIMIT:
            try:
                self._lu = spla.splu(self.K_II, permc_spec="MMD_AT_PLUS_A",
                                     options={"SymmetricMode": True})
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}", self._condition()) from exc
        else:
            import pyamg
            self._amg = pyamg.smoothed_aggregation_solver(self.K_II.tocsr(), symmetry="symmetric")

    def _condition(self):
        try:
            return float(spla.onenormest(self.K_II) * spla.onenormest(spla.inv(self.K_II)))
        except Exception:  # noqa: BLE001 - diagnostic only
            return None

    def _solve_real(self, rhs):
        if self._lu is not None:
            return self._lu.solve(rhs)
        out = np.empty_like(rhs)
        M = self._amg.aspreconditioner(cycle="V")
        for j in range(rhs.shape[1]):
            x, info = spla.cg(self.K_II, rhs[:, j], rtol=1e-12, maxiter=5000, M=M)
            if info != 0:
                raise SolverError(f"CG did not converge (info={info})")
            out[:, j] = x
        return out

    def solve(self, g_boundary):
        """Nodal solutions for boundary values ``g_boundary`` of shape (n_b,) or (n_b, m)."""
        g = np.asarray(g_boundary, dtype=complex)
        single = g.ndim == 1
        if single:
            g = g[:, None]
        m = g.shape[1]
        R = -(self.K_IB @ np.hstack([g.real, g.imag]))
        X = self._solve_real(R)
        res = self.K_II @ X - R
        scale = max(np.abs(R).max(), 1e-300)
        rel = float(np.abs(res).max() / scale)
        if not rel <= RESIDUAL_TOL:
            raise SolverError(f"discrete residual {rel:.2e} exceeds {RESIDUAL_TOL:g}", self._condition())
        U = np.empty((self.mesh.n_vertices, m), dtype=complex)
        U[self.bnd] = g
        U[self.interior] = X[:, :m] + 1j * X[:, m:]
        return U[:, 0] if single else U

    def energy(self, U, W):
        """U^T K W (bilinear)."""
        return U.T @ (self.K @ W)


@dataclass(frozen=True, eq=False)
class DiscreteField:
    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.mesh.n_vertices:
            raise ValueError("value count differs from vertex count")

    def gradients(self):
        G, _ = _p1_gradients(self.mesh)
        return np.einsum("tkd,tk->td", G, self.values[self.mesh.triangles])

    def energy_with(self, other: "DiscreteField", gamma: ConductivityField = UNIT) -> complex:
        K = assemble_stiffness(self.mesh, gamma)
        return complex(self.values @ (K @ other.values))

    def h1_seminorm(self) -> float:
        _, area = _p1_gradients(self.mesh)
        g = self.gradients()
        return float(np.sqrt(np.sum(area * np.sum(np.abs(g) ** 2, axis=1))))

    def l2_norm(self) -> float:
        Mm = assemble_mass(self.mesh)
        return float(np.sqrt(np.real(np.conj(self.values) @ (Mm @ self.values))))


_SOLVERS: "OrderedDict[tuple, DirichletSolver]" = OrderedDict()
_SOLVER_LOCK = threading.Lock()
_SOLVER_CACHE_SIZE = 4


def get_solver(mesh: TriMesh, gamma: ConductivityField = UNIT) -> DirichletSolver:
    """Cached factorization per (mesh, conductivity); insertion guarded by a lock."""
    key = (mesh.key, id(gamma))
    with _SOLVER_LOCK:
        s = _SOLVERS.get(key)
        if s is not None:
            _SOLVERS.move_to_end(key)
            return s
        s = DirichletSolver(mesh, gamma)
        _SOLVERS[key] = s
        while len(_SOLVERS) > _SOLVER_CACHE_SIZE:
            _SOLVERS.popitem(last=False)
        return s


def clear_caches():
    with _SOLVER_LOCK:
        _SOLVERS.clear()
    with _MESH_LOCK:
        _MESHES.clear()


def boundary_trace(mesh: TriMesh, f: BoundaryFunction):
    if f.domain != mesh.domain:
        raise ValueError("boundary function lives on another domain")
    f.check_trace_resolution(len(mesh.boundary))
    return f.at(mesh.boundary_theta)


def solve_dirichlet(mesh: TriMesh, gamma: ConductivityField, f: BoundaryFunction) -> DiscreteField:
    if not gamma.gamma0 > 0:
        raise ValueError("conductivity must be bounded below by a positive constant")
    return DiscreteField(mesh, get_solver(mesh, gamma).solve(boundary_trace(mesh, f)))


# -- mesh policy ---------------------------------------------------------------------------
_MESHES: "OrderedDict[tuple, TriMesh]" = OrderedDict()
_MESH_LOCK = threading.Lock()
_MESH_CACHE_SIZE = 6


@dataclass(frozen=True)
class MeshPolicy:
    """How meshes are chosen for a pairing.

    ``h_uniform`` forces one quasi-uniform mesh.  Otherwise probes (boundary
    functions whose meta names a frequency and envelope) get a graded mesh
    and band-limited functions a uniform mesh with ``ppw`` points per
    wavelength.  Probe frequencies are rounded up (and envelopes down) on a
    geometric ladder of ratio ``ladder`` so nearby probes share a mesh.
    """
    ppw: float = 10.0
    h_far: float = 0.1
    h_default: float = 0.05
    h_uniform: Optional[float] = None
    layer_factor: Optional[float] = 8.0
    grading: float = 0.3
    ladder: float = 1.0
    max_triangles: int = DEFAULT_MAX_TRIANGLES

    def _quantize(self, x, up=True):
        if self.ladder <= 1.0:
            return float(x)
        k = math.log(x) / math.log(self.ladder)
        k = math.ceil(k - 1e-9) if up else math.floor(k + 1e-9)
        return float(self.ladder**k)

    def mesh_key(self, domain: DomainGeometry, *metas):
        if self.h_uniform is not None:
            return ("uniform", domain, float(self.h_uniform))
        probes = [m for m in metas if m and "frequency" in m]
        if probes:
            freq = self._quantize(max(m["frequency"] for m in probes))
            M = self._quantize(min(m["M"] for m in probes), up=False)
            theta = probes[0]["anchor_theta"]
            return ("probe", domain, float(theta), freq, M)
        bw = max([m.get("bandwidth", 0) for m in metas if m] + [0])
        h = self.h_default if bw == 0 else min(self.h_default, 2 * math.pi / (bw * self.ppw))
        return ("uniform", domain, float(h))

    def build(self, key) -> TriMesh:
        if key[0] == "uniform":
            _, domain, h = key
            return generate_mesh(domain, h, max_triangles=self.max_triangles)
        _, domain, theta, freq, M = key
        P = domain.point(theta)
        return probe_mesh(domain, P, freq, 1.0, M, ppw=self.ppw, h_far=self.h_far,
                          layer_factor=self.layer_factor, grading=self.grading,
                          max_triangles=self.max_triangles)

    def mesh_for(self, domain: DomainGeometry, *metas) -> TriMesh:
        key = (self,) + self.mesh_key(domain, *metas)
        with _MESH_LOCK:
            m = _MESHES.get(key)
            if m is not None:
                _MESHES.move_to_end(key)
                return m
            m = self.build(key[1:])
            _MESHES[key] = m
            while len(_MESHES) > _MESH_CACHE_SIZE:
                _MESHES.popitem(last=False)
            return m


def disk_harmonic_pair(f: BoundaryFunction, g: BoundaryFunction) -> complex:
    """int Lambda f g on the unit circle: sum_n |n| (f|e_n) (g|e_{-n})."""
    if not f.domain.is_disk:
        raise ValueError("analytic multiplier path needs the unit disk")
    f._compatible(g)
    a = f.all_coefficients()
    b = g.all_coefficients()
    n = np.fft.fftfreq(f.n_b, 1.0 / f.n_b)
    b_neg = b[np.mod(-np.arange(f.n_b), f.n_b)]
    return complex(np.sum(np.abs(n) * a * b_neg))


class CleanOracle:
    """Noise-free DN pairings of one conductivity on one domain."""

    def __init__(self, domain: DomainGeometry, gamma: ConductivityField = UNIT,
                 policy: Optional[MeshPolicy] = None, mode: str = "fem"):
        if mode not in ("fem", "analytic-disk"):
            raise ValueError("mode must be 'fem' or 'analytic-disk'")
        if mode == "analytic-disk" and not domain.is_disk:
            raise ValueError("analytic-disk mode needs the unit disk")
        if not gamma.gamma0 > 0:
            raise ValueError("conductivity must be bounded below by a positive constant")
        self.domain = domain
        self.gamma = gamma
        self.policy = policy or MeshPolicy()
        self.mode = mode

    def mesh_for(self, *funcs) -> TriMesh:
        return self.policy.mesh_for(self.domain, *[f.meta for f in funcs])

    def _pair_on(self, mesh, gamma, f, g):
        s = get_solver(mesh, gamma)
        U = s.solve(np.stack([boundary_trace(mesh, f), boundary_trace(mesh, g)], axis=1))
        return complex(U[:, 0] @ (s.K @ U[:, 1]))

    def dn_pair(self, f: BoundaryFunction, g: BoundaryFunction, mesh: Optional[TriMesh] = None) -> complex:
        """int_D gamma grad u_f . grad u_g (bilinear)."""
        if self.mode == "analytic-disk" and self.gamma.is_constant:
            c = float(self.gamma.at(np.zeros(2)))
            return c * disk_harmonic_pair(f, g)
        mesh = mesh or self.mesh_for(f, g)
        return self._pair_on(mesh, self.gamma, f, g)

    def harmonic_pair(self, f: BoundaryFunction, g: BoundaryFunction, path: Optional[str] = None,
                      mesh: Optional[TriMesh] = None) -> complex:
        path = path or ("analytic" if self.mode == "analytic-disk" else "fem")
        if path == "analytic":
            return disk_harmonic_pair(f, g)
        if path != "fem":
            raise ValueError("path must be 'fem' or 'analytic'")
        mesh = mesh or self.mesh_for(f, g)
        return self._pair_on(mesh, UNIT, f, g)

    def grad_clean_term(self, f: BoundaryFunction, gamma_boundary) -> complex:
        """dn_pair(f, conj(f)/gamma_b) - harmonic_pair(f, conj(f)) on one shared mesh.

        Sharing the mesh cancels the leading discretization error of the two
        O(t^2) pairings, whose difference is O(1).
        """
        fc = f.conj()
        g = pointwise_div(fc, gamma_boundary)
        mesh = self.mesh_for(f)
        sg = get_solver(mesh, self.gamma)
        s1 = get_solver(mesh, UNIT)
        tf, tg = boundary_trace(mesh, f), boundary_trace(mesh, g)
        U = sg.solve(np.stack([tf, tg], axis=1))
        V = s1.solve(tf)
        a = U[:, 0] @ (sg.K @ U[:, 1])
        # conj(f) extends harmonically to conj(v_f)
        b = V @ (s1.K @ np.conj(V))
        if self.mode == "analytic-disk":
            b = disk_harmonic_pair(f, fc)
        return complex(a - b)

    def volume_term(self, f: BoundaryFunction, g: BoundaryFunction, mesh: Optional[TriMesh] = None) -> complex:
        """int_D (grad gamma / gamma) . grad u_f v_g with u_f gamma-harmonic and v_g harmonic."""
        mesh = mesh or self.mesh_for(f, g)
        u = get_solver(mesh, self.gamma).solve(boundary_trace(mesh, f))
        v = get_solver(mesh, UNIT).solve(boundary_trace(mesh, g))
        return _volume_integral(mesh, self.gamma, u, v)

    def identity_residual(self, f: BoundaryFunction, g: BoundaryFunction,
                          mesh: Optional[TriMesh] = None) -> float:
        """|int (gamma^-1 Lambda_gamma - Lambda) f g + int_D (grad gamma/gamma) . grad u_f v_g|."""
        mesh = mesh or self.mesh_for(f, g)
        lhs = self.dn_pair(f, pointwise_div(g, self.gamma), mesh=mesh) - self.harmonic_pair(f, g, "fem", mesh=mesh)
        return float(abs(lhs + self.volume_term(f, g, mesh)))

    def solution(self, f: BoundaryFunction, harmonic: bool = False) -> DiscreteField:
        mesh = self.mesh_for(f)
        return solve_dirichlet(mesh, UNIT if harmonic else self.gamma, f)


def _volume_integral(mesh: TriMesh, gamma: ConductivityField, u, v) -> complex:
    """Edge-midpoint rule for int (grad gamma/gamma) . grad u  v over P1 fields."""
    G, area = _p1_gradients(mesh)
    T = mesh.triangles
    gu = np.einsum("tkd,tk->td", G, u[T])
    V = mesh.vertices
    mids = 0.5 * (V[T[:, [1, 2, 0]]] + V[T[:, [2, 0, 1]]])
    w = gamma.grad_at(mids) / np.asarray(gamma.at(mids))[..., None]
    v_mid = 0.5 * (v[T[:, [1, 2, 0]]] + v[T[:, [2, 0, 1]]])
    integrand = np.einsum("tqd,td->tq", w, gu) * v_mid
    return complex(np.sum(integrand.mean(axis=1) * area))


def corrector_field(oracle: CleanOracle, spec, N: float, family: str = "gamma"):
    """Discrete solution minus the normalized probe profile a_{M,N} (nodal interpolant).

    ``family`` 'gamma' solves the conductivity equation, 'harmonic' the Laplace one.
    """
    if family not in ("gamma", "harmonic"):
        raise ValueError("family must be 'gamma' or 'harmonic'")
    probe = gamma_probe(spec, N)
    f = probe.boundary_function()
    mesh = oracle.mesh_for(f)
    chart = spec.chart
    y = chart.to_chart(mesh.vertices)
    xp = y[:, 0] - chart.p_prime
    inside = np.abs(y[:, 0]) < chart.radius
    xd = np.full(len(y), np.inf)
    xd[inside] = y[inside, 1] - chart.phi(y[inside, 0])
    xi = spec.frame.xi
    a = np.zeros(len(y), dtype=complex)
    ok = inside & (xd >= -1e-12) & (np.abs(xp) < probe.support)
    a[ok] = (probe.amplitude * eta(probe.M * np.abs(xp[ok]))
             * np.exp(N * (1j * xi[0] * xp[ok] + (1j * xi[1] - 1.0) * xd[ok])))
    gamma = UNIT if family == "harmonic" else oracle.gamma
    s = get_solver(mesh, gamma)
    # boundary data: the trace of a (equal to the probe on the boundary)
    U = s.solve(a[mesh.boundary])
    return DiscreteField(mesh, U - a)


def corrector_norm(oracle: CleanOracle, spec, N: float, theta: Optional[float] = None,
                   family: str = "gamma") -> float:
    """H1 seminorm (gamma family) or L2 norm (harmonic family) of the corrector over D (unweighted)."""
    if theta is not None and theta != spec.theta:
        spec = ProbeSpec(spec.chart, spec.frame, theta, "gamma")
    d = corrector_field(oracle, spec, N, family)
    return d.h1_seminorm() if family == "gamma" else d.l2_norm()
