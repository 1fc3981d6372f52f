"""Spectral comparison toolkit for surfaces given by chart metrics.

The package checks a Dirichlet-vs-Neumann eigenvalue comparison on
two-dimensional chart domains: symbolic metric handling and curvature
screening (:mod:`surfspec.geometry`), periodic-aware triangulations
(:mod:`surfspec.mesh`), finite element operators for functions and
1-forms (:mod:`surfspec.assembly`), deterministic eigensolvers
(:mod:`surfspec.eigen`), the named verification checks
(:mod:`surfspec.verify`), and a JSON-config command line front end
(:mod:`surfspec.cli`).
"""

from .assembly import (
    AssemblyError,
    OneFormOperators,
    ScalarOperators,
    apply_dirichlet,
    assemble_oneform,
    assemble_scalar,
    dirichlet_form_quadrature,
    export_matrix_market,
    star_oneform,
)
from .eigen import (
    EigenError,
    SolverOptions,
    SpectralResult,
    cluster_multiplicities,
    solve_oneform,
    solve_smallest,
)
from .expr import Expr, ExprError, ParseError, differentiate, parse
from .geometry import (
    ChartMetric,
    DistanceFunction,
    GeometryError,
    GridSpec,
    builtin_metric,
    check_unit_gradient,
    curvature_condition_check,
    gaussian_curvature_expr,
    laplacian_expr,
    margin_expr,
)
from .mesh import DomainSpec, Mesh, MeshError, export_off, refine, triangulate
from .verify import (
    VerificationReport,
    VerifyError,
    convergence_study,
    curvature_check,
    cylinder_oracle,
    hodge_dimension_check,
    lemma_check,
    oracle_check,
    recompute_pass,
    spectrum_union_check,
    verify_inequality,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AssemblyError",
    "ChartMetric",
    "DistanceFunction",
    "DomainSpec",
    "EigenError",
    "Expr",
    "ExprError",
    "GeometryError",
    "GridSpec",
    "Mesh",
    "MeshError",
    "OneFormOperators",
    "ParseError",
    "ScalarOperators",
    "SolverOptions",
    "SpectralResult",
    "VerificationReport",
    "VerifyError",
    "apply_dirichlet",
    "assemble_oneform",
    "assemble_scalar",
    "builtin_metric",
    "check_unit_gradient",
    "cluster_multiplicities",
    "convergence_study",
    "curvature_check",
    "curvature_condition_check",
    "cylinder_oracle",
    "differentiate",
    "dirichlet_form_quadrature",
    "export_matrix_market",
    "export_off",
    "gaussian_curvature_expr",
    "hodge_dimension_check",
    "laplacian_expr",
    "lemma_check",
    "margin_expr",
    "oracle_check",
    "parse",
    "recompute_pass",
    "refine",
    "solve_oneform",
    "solve_smallest",
    "spectrum_union_check",
    "star_oneform",
    "triangulate",
    "verify_inequality",
]
