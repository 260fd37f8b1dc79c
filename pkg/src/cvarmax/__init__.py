"""Risk-aware maximization of stochastic monotone submodular set functions
under matroid constraints: greedy grid-search solver with curvature-based
optimality certificates, two study problem families, and a street-network
dispatch simulator with online triggering."""

from .core import (
    Curvature,
    GroundSet,
    Matroid,
    PartitionMatroid,
    UniformMatroid,
    brute_force_max_h,
    curvature_estimate,
    greedy_maximize,
    matroid_contains,
)
from .risk import (
    CvarEstimate,
    RiskParams,
    ScenarioTable,
    auxiliary_h,
    estimate_cvar,
    estimate_var,
    required_samples,
    substream,
)
from .sga import Certificate, SgaResult, certificate, eval_count_bound, sga_solve

__all__ = [
    "Certificate",
    "Curvature",
    "CvarEstimate",
    "GroundSet",
    "Matroid",
    "PartitionMatroid",
    "RiskParams",
    "ScenarioTable",
    "SgaResult",
    "UniformMatroid",
    "auxiliary_h",
    "brute_force_max_h",
    "certificate",
    "curvature_estimate",
    "estimate_cvar",
    "estimate_var",
    "eval_count_bound",
    "greedy_maximize",
    "matroid_contains",
    "required_samples",
    "sga_solve",
    "substream",
]

__version__ = "0.1.0"
