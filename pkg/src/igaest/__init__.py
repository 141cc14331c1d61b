"""Isogeometric Poisson solvers with functional a posteriori error estimates.

The package builds truncated hierarchical B-spline spaces on tensor-product
geometries, solves the Galerkin problem, and reports guaranteed upper
(majorant) and lower (minorant) bounds of the energy error together with a
residual indicator. Adaptive runs mark elements with the local majorant.
"""

from .adaptivity import (
    AdaptiveResult,
    AdaptiveRunConfig,
    MarkingCriterion,
    adaptive_solve,
    mark,
    refine_marked,
    refine_uniform,
)
from .assembly import DiscreteField, NotSPDError, assemble_primal, solve_cg, solve_direct
from .cases import ProblemCase, get_case, list_cases, polynomial_case, weak_residual
from .estimates import (
    REPORT_COLUMNS,
    ErrorReport,
    compute_exact_error,
    compute_majorant,
    compute_minorant,
    compute_residual_estimator,
    efficiency_and_eoc,
    friedrichs_constant,
    report_csv,
)
from .estimator import IgaPoissonEstimator
from .geometry import GeometryMap, Mesh, QuadratureRule, quarter_annulus, rectangle, unit_cube, unit_square
from .harness import run_case
from .hierarchy import DomainHierarchy, HierarchicalBasis, HierarchyDepthError
from .splines import KnotVector, TensorBasis

__version__ = "0.1.0"

__all__ = [
    "AdaptiveResult", "AdaptiveRunConfig", "MarkingCriterion", "adaptive_solve", "mark",
    "refine_marked", "refine_uniform", "DiscreteField", "NotSPDError", "assemble_primal",
    "solve_cg", "solve_direct", "ProblemCase", "get_case", "list_cases", "polynomial_case",
    "weak_residual", "REPORT_COLUMNS", "ErrorReport", "compute_exact_error", "compute_majorant",
    "compute_minorant", "compute_residual_estimator", "efficiency_and_eoc", "friedrichs_constant",
    "report_csv", "IgaPoissonEstimator", "GeometryMap", "Mesh", "QuadratureRule",
    "quarter_annulus", "rectangle", "unit_cube", "unit_square", "run_case", "DomainHierarchy",
    "HierarchicalBasis", "HierarchyDepthError", "KnotVector", "TensorBasis",
]
