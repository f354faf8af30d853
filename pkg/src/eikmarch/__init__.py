"""Factored-eikonal fast marching with triangular sensitivities and
Gauss-Newton travel-time tomography."""

from .analytic import AnalyticCase, default_params, eval_case
from .fastmarch import (AxisStencil, FmConfig, FmSolution, FrontHeap,
                        QuadraticTerm, SolverError, assemble_terms, fm_solve,
                        local_update, solve_piecewise_quadratic)
from .grid import (DistanceFactor, GridError, RegularGrid, ScalarField,
                   SourceSpec, build_distance_factor, linf_error,
                   mean_l2_error)
from .sensitivity import (SensitivityOperator, apply_jacobian,
                          apply_jacobian_transpose, assemble_operator)
from .tomography import (BoundMap, InversionConfig, InversionResult, Survey,
                         SurveyGeometry, bound_map_apply, bound_map_deriv,
                         forward_data, gauss_newton, objective,
                         regularization, synthesize_survey)

__version__ = "0.1.0"

__all__ = [
    "AnalyticCase", "AxisStencil", "BoundMap", "DistanceFactor", "FmConfig",
    "FmSolution", "FrontHeap", "GridError", "InversionConfig",
    "InversionResult", "QuadraticTerm", "RegularGrid", "ScalarField",
    "SensitivityOperator", "SolverError", "SourceSpec", "Survey",
    "SurveyGeometry", "apply_jacobian", "apply_jacobian_transpose",
    "assemble_operator", "assemble_terms", "bound_map_apply",
    "bound_map_deriv", "build_distance_factor", "default_params",
    "eval_case", "fm_solve", "forward_data", "gauss_newton", "linf_error",
    "local_update", "mean_l2_error", "objective", "regularization",
    "solve_piecewise_quadratic", "synthesize_survey",
]
