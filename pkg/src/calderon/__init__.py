"""Boundary determination of a conductivity from noisy Dirichlet-to-Neumann data."""
from .boundary import BoundaryBasis, BoundaryFunction, coefficients, inner, pointwise_div
from .conductivity import ConductivityField, builtin_field
from .geometry import BoundaryChart, DomainGeometry, FrameAtP, build_chart, select_xi
from .mesh import MeshBudgetError, TriMesh, generate_mesh, required_resolution
from .noise import NoisyOracle, NoiseRealization, noise_pair, sample_noise, truncation_rule
from .probes import ProbeSpec, eta, probe_gamma, probe_grad
from .reconstruct import (GradRecovery, RecoveryTrace, filtering_moment, fit_rate, plan_sample_size,
                          quantile_experiment, recover_gamma, recover_grad)
from .solver import CleanOracle, DiscreteField, MeshPolicy, solve_dirichlet

__version__ = "0.1.0"

__all__ = [
    "BoundaryBasis",
    "BoundaryChart",
    "BoundaryFunction",
    "CleanOracle",
    "ConductivityField",
    "DiscreteField",
    "DomainGeometry",
    "FrameAtP",
    "GradRecovery",
    "MeshBudgetError",
    "MeshPolicy",
    "NoiseRealization",
    "NoisyOracle",
    "ProbeSpec",
    "RecoveryTrace",
    "TriMesh",
    "build_chart",
    "builtin_field",
    "coefficients",
    "eta",
    "filtering_moment",
    "fit_rate",
    "generate_mesh",
    "inner",
    "noise_pair",
    "plan_sample_size",
    "pointwise_div",
    "probe_gamma",
    "probe_grad",
    "quantile_experiment",
    "recover_gamma",
    "recover_grad",
    "required_resolution",
    "sample_noise",
    "select_xi",
    "solve_dirichlet",
    "truncation_rule",
]
