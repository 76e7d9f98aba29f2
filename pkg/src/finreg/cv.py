"""Regularization paths and K-fold cross-validation."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .design import CUMULATIVE, ModelData, PenaltySpec
from .errors import FinregError
from .inference import latent_location
from .links import cdf
from .objective import neg_loglik_grad
from .prox_newton import SolverOptions, fit

log = logging.getLogger(__name__)

# lambda_max is padded by this much relative to the gradient bound so that
# solver-level noise in the restricted fit cannot push a coefficient off zero
LAMBDA_MAX_PAD = 1e-6


def restricted_fit(model: ModelData, pen: PenaltySpec, opts: SolverOptions | None = None):
    """Fit with every penalized coordinate pinned at zero; returns the full-length vector."""
    penalized = pen.l1_weight > 0
    theta = np.zeros(model.d)
    free = np.flatnonzero(~penalized)
    if free.size:
        sub = model.restrict(free)
        res = fit(sub, pen.subset(free), opts)
        if not res.converged:
            raise FinregError(f"restricted fit did not converge: {res.message}")
        theta[free] = res.theta_hat
    return theta


def lambda_max(model: ModelData, pen: PenaltySpec | None = None, opts=None):
    """Smallest ``lambda1`` at which all penalized coordinates are zero.

    Returns ``(lambda_max, theta_restricted)``.
    """
    pen = model.penalty_default if pen is None else pen
    penalized = pen.l1_weight > 0
    if not penalized.any():
        raise ValueError("no penalized coordinates")
    theta = restricted_fit(model, pen, opts)
    grad = neg_loglik_grad(model, theta)
    lam = float(np.max(np.abs(grad[penalized]) / pen.l1_weight[penalized]))
    return lam * (1.0 + LAMBDA_MAX_PAD), theta


def lambda_path(model: ModelData, pen: PenaltySpec | None = None, n_lambda: int = 50,
                ratio: float = 1e-2, opts=None) -> np.ndarray:
    """Log-spaced decreasing grid from ``lambda_max`` to ``ratio * lambda_max``."""
    if n_lambda < 1:
        raise ValueError("n_lambda must be at least 1")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    lam, _ = lambda_max(model, pen, opts)
    if n_lambda == 1:
        return np.array([lam])
    return lam * ratio ** (np.arange(n_lambda) / (n_lambda - 1))


def _in_interval(loc, lower, upper):
    return (loc >= lower) & (loc < upper)


def misclassification_rate(model: ModelData, theta, rows=None) -> float:
    """Share of observations whose predicted location falls outside the observed interval.

    For cumulative models the prediction is the modal category instead.
    """
    m = model if rows is None else model.take(rows)
    theta = np.asarray(theta, float)
    if m.kind == CUMULATIVE:
        k = m.meta["n_categories"] - 1
        X = m.meta["X"]
        eta = X @ theta[k:] if X.shape[1] else np.zeros(m.n)
        cum = cdf(m.family, theta[None, :k] - eta[:, None])
        probs = np.diff(np.c_[np.zeros(m.n), cum, np.ones(m.n)], axis=1)
        pred = np.argmax(probs, axis=1) + 1
        return float(np.mean(pred != m.meta["y"]))
    loc = latent_location(m, theta)
    return float(np.mean(~_in_interval(loc, m.meta["lower"], m.meta["upper"])))


def fold_assignments(n: int, K: int, seed) -> np.ndarray:
    if not 2 <= K <= n:
        raise ValueError("need 2 <= K <= n")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=int)
    folds[rng.permutation(n)] = np.arange(n) % K
    return folds


@dataclass
class CvResult:
    lambdas: np.ndarray
    mean_loss: np.ndarray
    se_loss: np.ndarray
    fold_assignments: np.ndarray
    selected_lambda: float
    selected_index: int
    fold_losses: np.ndarray
    n_invalid: int

    def to_dict(self) -> dict:
        clean = lambda a: [None if not np.isfinite(x) else float(x) for x in a]
        return {
            "lambdas": clean(self.lambdas),
            "mean_loss": clean(self.mean_loss),
            "se_loss": clean(self.se_loss),
            "fold_assignments": [int(f) for f in self.fold_assignments],
            "selected_lambda": float(self.selected_lambda),
            "selected_index": int(self.selected_index),
            "n_invalid": int(self.n_invalid),
        }


def _fold_path(model, pen, grid, train, test, opts, warm_start, loss):
    train_m, test_m = model.take(train), model.take(test)
    losses = np.full(len(grid), np.nan)
    theta = None
    for i, lam in enumerate(grid):
        try:
            res = fit(train_m, pen.with_lambdas(lambda1=lam), opts, theta0=theta if warm_start else None)
        except FinregError as exc:
            log.warning("fold fit failed at lambda=%.4g: %s", lam, exc)
            continue
        if not res.converged:
            continue
        theta = res.theta_hat
        losses[i] = loss(test_m, theta)
    return losses


def select_lambda(lambdas, mean_loss, se_loss=None, one_se=False, tie_tol=1e-12) -> int:
    """Index of the minimizing lambda; ties go to the largest lambda."""
    lambdas = np.asarray(lambdas, float)
    ok = np.isfinite(mean_loss)
    if not ok.any():
        raise FinregError("no lambda has a valid cross-validation loss")
    best = np.nanmin(mean_loss)
    thresh = best + tie_tol
    if one_se:
        i_best = int(np.flatnonzero(ok & (mean_loss <= best + tie_tol))[0])
        thresh = best + (se_loss[i_best] if np.isfinite(se_loss[i_best]) else 0.0) + tie_tol
    cand = np.flatnonzero(ok & (mean_loss <= thresh))
    return int(cand[np.argmax(lambdas[cand])])


def kfold_cv(model: ModelData, pen: PenaltySpec | None = None, grid=None, K: int = 5, seed=0,
             opts: SolverOptions | None = None, warm_start: bool = True, n_jobs: int = 1,
             loss=misclassification_rate, one_se: bool = False, n_lambda: int = 50,
             ratio: float = 1e-2) -> CvResult:
    """K-fold cross-validation over a decreasing ``lambda1`` grid."""
    pen = model.penalty_default if pen is None else pen
    if grid is None:
        grid = lambda_path(model, pen, n_lambda, ratio, opts)
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    folds = fold_assignments(model.n, K, seed)
    idx = np.arange(model.n)

    def run(k):
        return _fold_path(model, pen, grid, idx[folds != k], idx[folds == k], opts, warm_start, loss)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            rows = list(ex.map(run, range(K)))
    else:
        rows = [run(k) for k in range(K)]
    fold_losses = np.vstack(rows)
    n_invalid = int(np.sum(np.isnan(fold_losses)))
    if n_invalid:
        log.warning("%d (lambda, fold) cells failed and were excluded", n_invalid)
    valid = np.sum(~np.isnan(fold_losses), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(valid > 0, np.nansum(fold_losses, axis=0) / np.maximum(valid, 1), np.nan)
        dev = np.where(np.isnan(fold_losses), 0.0, fold_losses - mean) ** 2
        se = np.where(valid > 1, np.sqrt(dev.sum(axis=0) / np.maximum(valid - 1, 1) / valid), np.nan)
    i = select_lambda(grid, mean, se, one_se)
    return CvResult(grid, mean, se, folds, float(grid[i]), i, fold_losses, n_invalid)
