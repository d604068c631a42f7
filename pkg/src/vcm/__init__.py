"""Time-varying-coefficient regression for longitudinal data.

Coefficient functions are represented by B-spline basis expansions and
estimated by maximum penalized likelihood (backfitting); regularization
weights are chosen by information criteria or cross-validation.
"""

from .basis import BSplineBasis, basis_matrix, evaluate_basis, make_uniform_basis
from .bootstrap import BandResult, bootstrap_bands
from .estimation import (DesignStats, FitConfig, RankDeficiencyError, backfit_step,
                         fit, update_sigma2)
from .model import (FittedModel, LongitudinalDataset, ModelSpec, SubjectRecord,
                    auto_model_spec, coefficient_curve, design_blocks,
                    expand_lambdas, log_likelihood, penalized_log_likelihood,
                    predict, second_difference_penalty)
from .selection import (CriterionReport, CurvatureMatrices, SingularCurvatureError,
                        compute_Q, compute_R, compute_curvature, cv_score, gbic,
                        gic, laplace_marginal_neg2log, lambda_axis, lambda_grid,
                        select, select_coordinate_descent)
from .simulation import (ComparisonResult, SimDesign, SimulatedData, amse,
                         generate, run_comparison, true_beta1, true_beta2)

__all__ = [
    "BSplineBasis", "make_uniform_basis", "evaluate_basis", "basis_matrix",
    "SubjectRecord", "LongitudinalDataset", "ModelSpec", "FittedModel",
    "auto_model_spec", "design_blocks", "predict", "coefficient_curve",
    "log_likelihood", "penalized_log_likelihood", "expand_lambdas",
    "second_difference_penalty",
    "FitConfig", "DesignStats", "RankDeficiencyError", "backfit_step",
    "update_sigma2", "fit",
    "CurvatureMatrices", "CriterionReport", "SingularCurvatureError",
    "compute_R", "compute_Q", "compute_curvature", "gic", "gbic",
    "laplace_marginal_neg2log", "cv_score", "lambda_axis", "lambda_grid",
    "select", "select_coordinate_descent",
    "SimDesign", "SimulatedData", "ComparisonResult", "generate", "amse",
    "run_comparison", "true_beta1", "true_beta2",
    "BandResult", "bootstrap_bands",
]
