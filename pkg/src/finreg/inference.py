"""Observed-information standard errors, Wald and likelihood-ratio tests, BIC
and category probabilities for fitted models."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .design import CUMULATIVE, INTERVAL, SURVIVAL, ModelData, build_cumulative, \
    build_interval_regression, build_survival
from .errors import InfeasibleError, PenalizedFitError
from .objective import neg_loglik_hess
from .prox_newton import FitResult


def observed_information(model: ModelData, theta_hat) -> np.ndarray:
    """``-Hessian of the log-likelihood`` at ``theta_hat`` (n times the Hessian of G_n)."""
    return model.n * neg_loglik_hess(model, theta_hat)


def _require_unpenalized(fit: FitResult):
    if fit.penalized:
        raise PenalizedFitError("likelihood-based inference needs an unpenalized fit")


def bic(fit: FitResult, n: int, d_free: int) -> float:
    _require_unpenalized(fit)
    return d_free * math.log(n) - 2.0 * fit.loglik


def two_sided_p(z):
    return 2.0 * stats.norm.sf(np.abs(z))


@dataclass
class InferenceTable:
    labels: list
    estimates: np.ndarray
    std_errors: np.ndarray
    z_values: np.ndarray
    p_values: np.ndarray
    null_values: np.ndarray
    loglik: float
    bic: float
    rank: int
    covariance: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(x) else float(x) for x in a]

        return {
            "labels": list(self.labels),
            "estimates": clean(self.estimates),
            "std_errors": clean(self.std_errors),
            "z_values": clean(self.z_values),
            "p_values": clean(self.p_values),
            "null_values": clean(self.null_values),
            "loglik": float(self.loglik),
            "bic": float(self.bic),
            "rank": int(self.rank),
        }


def invert_information(info: np.ndarray):
    """Covariance from the information matrix via Cholesky.

    Returns ``(cov, rank)``; ``cov`` is all-NaN when the matrix is not
    positive definite, and ``rank`` is its numerical rank.
    """
    d = info.shape[0]
    try:
        c = linalg.cho_factor(info, lower=True)
        cov = linalg.cho_solve(c, np.eye(d))
        return 0.5 * (cov + cov.T), d
    except linalg.LinAlgError:
        w = np.linalg.eigvalsh(info)
        tol = max(d, 1) * np.finfo(float).eps * max(abs(w).max(), 1.0)
        return np.full((d, d), np.nan), int(np.sum(w > tol))


def default_nulls(model: ModelData) -> np.ndarray:
    null = np.zeros(model.d)
    null[list(model.scale_coords)] = 1.0
    return null


def wald_table(model: ModelData, fit: FitResult, null_values=None) -> InferenceTable:
    _require_unpenalized(fit)
    theta = np.asarray(fit.theta_hat, float)
    null = default_nulls(model) if null_values is None else np.asarray(null_values, float)
    cov, rank = invert_information(observed_information(model, theta))
    with np.errstate(invalid="ignore"):
        se = np.sqrt(np.diag(cov))
        z = (theta - null) / se
    p = two_sided_p(z)
    return InferenceTable(
        labels=list(model.labels), estimates=theta, std_errors=se, z_values=z,
        p_values=p, null_values=null, loglik=fit.loglik,
        bic=bic(fit, model.n, model.d), rank=rank, covariance=cov,
    )


def natural_scale_table(model: ModelData, fit: FitResult) -> InferenceTable:
    """Wald table for ``(sigma, beta)`` of an unknown-scale interval regression.

    Uses the delta method on ``sigma = 1/theta_1`` and ``beta = theta_rest/theta_1``;
    the null for ``sigma`` is 1 and for each ``beta_j`` is 0.
    """
    if model.kind != INTERVAL or model.meta.get("scale") != "unknown":
        raise ValueError("natural-scale table needs an unknown-scale interval regression")
    table = wald_table(model, fit)
    theta = table.estimates
    t1 = theta[0]
    est = np.r_[1.0 / t1, theta[1:] / t1]
    jac = np.zeros((model.d, model.d))
    jac[0, 0] = -1.0 / t1 ** 2
    jac[1:, 0] = -theta[1:] / t1 ** 2
    jac[1:, 1:] = np.eye(model.d - 1) / t1
    cov = jac @ table.covariance @ jac.T
    null = np.r_[1.0, np.zeros(model.d - 1)]
    with np.errstate(invalid="ignore"):
        se = np.sqrt(np.diag(cov))
        z = (est - null) / se
    return InferenceTable(
        labels=["scale"] + list(model.labels[1:]), estimates=est, std_errors=se,
        z_values=z, p_values=two_sided_p(z), null_values=null, loglik=table.loglik,
        bic=table.bic, rank=table.rank, covariance=cov,
    )


@dataclass(frozen=True)
class LRTResult:
    stat: float
    df: int
    p: float


def lrt(fit_small: FitResult, fit_large: FitResult, df: int, tol: float = 1e-8) -> LRTResult:
    """Likelihood-ratio test of a nested smaller model against a larger one."""
    _require_unpenalized(fit_small)
    _require_unpenalized(fit_large)
    if df < 1:
        raise ValueError("df must be positive")
    stat = 2.0 * (fit_large.loglik - fit_small.loglik)
    if stat < -2.0 * tol * max(1.0, abs(fit_large.loglik)):
        raise ValueError("smaller model fits better than the larger one: models are not nested")
    stat = max(stat, 0.0)
    return LRTResult(stat, int(df), float(stats.chi2.sf(stat, df)))


def chi2_pvalue(stat: float, df: int) -> float:
    return float(stats.chi2.sf(stat, df))


def category_grid(model: ModelData):
    """Default category grid of a model: finite cuts seen in the data, or categories."""
    if model.kind == CUMULATIVE:
        return int(model.meta["n_categories"])
    if model.kind in (INTERVAL, SURVIVAL):
        ends = np.r_[model.meta["lower"], model.meta["upper"]]
        ends = ends[np.isfinite(ends)]
        if model.kind == SURVIVAL:
            ends = ends[ends > 0]
        return np.unique(ends)
    raise ValueError("model has no category grid")


def _category_bounds(model: ModelData, grid):
    cuts = np.asarray(grid, float)
    if cuts.ndim != 1 or np.any(np.diff(cuts) <= 0):
        raise ValueError("cut points must be strictly increasing")
    first = 0.0 if model.kind == SURVIVAL else -np.inf
    return np.r_[first, cuts], np.r_[cuts, np.inf]


def predict_probs(template: ModelData, theta, x, grid=None, basis_lower=None,
                  basis_upper=None) -> np.ndarray:
    """Probabilities of every category at predictor vector ``x``.

    ``grid`` is a number of categories for cumulative models and a vector of
    cut points otherwise (defaulting to the cuts seen in the training data).
    Custom survival bases need the basis values at the category bounds.
    """
    theta = np.asarray(theta, float)
    x = np.atleast_1d(np.asarray(x, float))
    grid = category_grid(template) if grid is None else grid
    family = template.family
    if template.kind == CUMULATIVE:
        m = int(grid)
        model = build_cumulative(np.arange(1, m + 1), np.tile(x, (m, 1)) if x.size else None,
                                 n_categories=m, family=family)
    elif template.kind == INTERVAL:
        lo, hi = _category_bounds(template, grid)
        model = build_interval_regression(np.tile(x, (lo.size, 1)), lo, hi,
                                          scale=template.meta["scale"], family=family)
    elif template.kind == SURVIVAL:
        lo, hi = _category_bounds(template, grid)
        model = build_survival(lo, hi, np.tile(x, (lo.size, 1)), basis=template.meta["basis"],
                               basis_lower=basis_lower, basis_upper=basis_upper)
    else:
        raise ValueError("prediction needs an interval, cumulative or survival model")
    if model.d != theta.size:
        raise ValueError("theta does not match the model dimension")
    logp = model.log_probs(theta)
    if not np.all(np.isfinite(logp)):
        raise InfeasibleError("some category has zero probability at theta")
    return np.exp(logp)


def latent_location(model: ModelData, theta, X=None) -> np.ndarray:
    """Predicted latent location on the scale of the observed interval endpoints.

    Interval regression: ``x'theta`` (known scale) or ``x'theta_rest / theta_1``.
    Exponential and Weibull survival: ``exp(x'beta)`` and ``exp(x'beta / gamma)``.
    """
    theta = np.asarray(theta, float)
    X = model.meta["X"] if X is None else np.asarray(X, float)
    off = model.meta["x_offset"]
    if model.kind == INTERVAL:
        if model.meta["scale"] == "unknown":
            if theta[0] <= 0:
                raise InfeasibleError("inverse scale must be positive")
            return X @ theta[1:] / theta[0]
        return X @ theta
    if model.kind == SURVIVAL and model.meta["basis"] in ("exponential", "weibull"):
        eta = X @ theta[off:]
        if model.meta["basis"] == "weibull":
            if theta[0] <= 0:
                raise InfeasibleError("Weibull shape must be positive")
            eta = eta / theta[0]
        return np.exp(eta)
    raise ValueError("latent location is defined for interval and exponential/Weibull survival models")
