"""Penalized likelihood regression for interval-valued and other finite-support responses."""

__version__ = "0.1.0"

from .cv import CvResult, kfold_cv, lambda_max, lambda_path, misclassification_rate
from .design import ModelData, ObservationBlock, PenaltySpec, build_cumulative, \
    build_interval_regression, build_survival
from .errors import DataError, FinregError, InfeasibleError, NumericalError, PenalizedFitError
from .fista import fit_fista
from .inference import InferenceTable, bic, lrt, natural_scale_table, observed_information, \
    predict_probs, wald_table
from .links import IntervalEndpoints, LinkFamily, family_eval, interval_grad_hess, log_interval_prob
from .objective import neg_loglik, neg_loglik_grad, neg_loglik_hess, penalized_obj
from .prox_newton import FitResult, SolverOptions, fit, j_residual, jq_residual, soft_threshold

__all__ = [
    "CvResult", "DataError", "FinregError", "FitResult", "InfeasibleError", "InferenceTable",
    "IntervalEndpoints", "LinkFamily", "ModelData", "NumericalError", "ObservationBlock",
    "PenalizedFitError", "PenaltySpec", "SolverOptions", "bic", "build_cumulative",
    "build_interval_regression", "build_survival", "family_eval", "fit", "fit_fista",
    "interval_grad_hess", "j_residual", "jq_residual", "kfold_cv", "lambda_max", "lambda_path",
    "log_interval_prob", "lrt", "misclassification_rate", "natural_scale_table", "neg_loglik",
    "neg_loglik_grad", "neg_loglik_hess", "observed_information", "penalized_obj",
    "predict_probs", "soft_threshold", "wald_table",
]
