"""Monte Carlo comparison of the correct interval likelihood against naive fits.

Two settings are provided:

``extreme_value_lowdim``
    ``Y* = x'theta + W`` with extreme-value ``W`` and an intercept plus two
    correlated predictors.  ``exp(Y*)`` is binned into ``[0, d), [d, 2d), ...,
    [kd, 5), [5, inf)``.  The comparator is a log-link gamma GLM fitted to the
    upper endpoints (``5 + d`` for the last bin).
``gaussian_highdim``
    ``Y* = x'theta + W`` with standard normal ``W`` and ``p`` possibly above
    ``n``; ``Y*`` is binned on a grid symmetric about zero.  Both the
    likelihood fit and the squared-error lasso comparator pick ``lambda1`` by
    5-fold cross-validation.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .cv import fold_assignments, kfold_cv, lambda_path, select_lambda
from .design import build_interval_regression
from .errors import FinregError
from .prox_newton import fit

log = logging.getLogger(__name__)

LOWDIM = "extreme_value_lowdim"
HIGHDIM = "gaussian_highdim"
UPPER_CUT = 5.0


@dataclass(frozen=True)
class SimConfig:
    setting: str = LOWDIM
    n: int = 100
    p: int = 3
    interval_size: float = 1.0
    replications: int = 100
    seed: int = 0
    n_test: int | None = None
    n_folds: int = 5
    n_lambda: int = 20
    lambda_ratio: float = 0.02
    n_jobs: int = 1

    def __post_init__(self):
        if self.setting not in (LOWDIM, HIGHDIM):
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.setting == LOWDIM and self.p != 3:
            raise ValueError("the low-dimensional setting has p = 3 (intercept plus two predictors)")
        if self.p < 3:
            raise ValueError("need p >= 3 for three nonzero coefficients")
        if self.interval_size <= 0:
            raise ValueError("interval_size must be positive")
        if self.replications < 1 or self.n < 2:
            raise ValueError("need at least one replication and two observations")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


def true_theta(setting: str, p: int) -> np.ndarray:
    theta = np.zeros(p)
    theta[:3] = [1.0, 0.5, -0.5]
    return theta


def ar_covariance(p: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_predictors(n: int, p: int, seed, intercept: bool = False) -> np.ndarray:
    """Centered and scaled Gaussian predictors with covariance ``0.5^|i-j|``.

    With ``intercept=True`` the first of the ``p`` columns is all ones.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    rng = np.random.default_rng(seed)
    q = p - 1 if intercept else p
    Z = rng.standard_normal((n, q)) @ np.linalg.cholesky(ar_covariance(q)).T
    Z = (Z - Z.mean(axis=0)) / Z.std(axis=0, ddof=1)
    return np.c_[np.ones(n), Z] if intercept else Z


def bin_edges(setting: str, interval_size: float) -> np.ndarray:
    k = math.ceil(UPPER_CUT / interval_size) - 1
    pos = np.r_[np.arange(k + 1) * interval_size, UPPER_CUT]
    if setting == LOWDIM:
        return np.r_[pos, np.inf]
    return np.r_[-np.inf, -pos[::-1][:-1], pos, np.inf]


def gen_intervals(setting, X, theta_star, interval_size, seed, return_latent=False):
    """Draw latent responses and report the grid cell containing each.

    The reported scale is ``exp(Y*)`` for the extreme-value setting and
    ``Y*`` for the Gaussian one.
    """
    X = np.asarray(X, float)
    theta_star = np.asarray(theta_star, float)
    if X.shape[1] != theta_star.size:
        raise ValueError("theta_star length does not match X")
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    if setting == LOWDIM:
        w = np.log(rng.standard_exponential(n))
        latent = np.exp(X @ theta_star + w)
    elif setting == HIGHDIM:
        latent = X @ theta_star + rng.standard_normal(n)
    else:
        raise ValueError(f"unknown setting {setting!r}")
    edges = bin_edges(setting, interval_size)
    idx = np.searchsorted(edges, latent, side="right") - 1
    lower, upper = edges[idx], edges[idx + 1]
    if return_latent:
        return lower, upper, latent
    return lower, upper


def gamma_glm_irls(X, y, tol=1e-10, max_iter=100) -> np.ndarray:
    """Log-link gamma GLM by iteratively reweighted least squares.

    With the log link the working weights are constant, so every step is an
    ordinary least-squares fit to the working response.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    beta = np.linalg.lstsq(X, np.log(y), rcond=None)[0]
    for _ in range(max_iter):
        eta = X @ beta
        z = eta + (y - np.exp(eta)) / np.exp(eta)
        new = np.linalg.lstsq(X, z, rcond=None)[0]
        if np.max(np.abs(new - beta)) <= tol * (1.0 + np.max(np.abs(beta))):
            return new
        beta = new
    raise FinregError("gamma GLM did not converge")


@njit(cache=True)
def _lasso_sweeps(X, y, lam, beta, col_sq, tol, max_sweeps):
    n, p = X.shape
    resid = y - X @ beta
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = beta[j]
            rho = 0.0
            for i in range(n):
                rho += X[i, j] * resid[i]
            rho = rho / n + col_sq[j] * old
            if rho > lam:
                new = (rho - lam) / col_sq[j]
            elif rho < -lam:
                new = (rho + lam) / col_sq[j]
            else:
                new = 0.0
            if new != old:
                for i in range(n):
                    resid[i] -= X[i, j] * (new - old)
                beta[j] = new
                biggest = max(biggest, abs(new - old))
        if biggest <= tol:
            break
    return beta


def lasso_cd(X, y, lam, beta0=None, tol=1e-10, max_sweeps=10_000) -> np.ndarray:
    """Coordinate descent for ``||y - X b||^2 / (2n) + lam ||b||_1``."""
    X = np.asfortranarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.zeros(X.shape[1]) if beta0 is None else np.array(beta0, float)
    col_sq = np.sum(X * X, axis=0) / X.shape[0]
    return _lasso_sweeps(X, y, float(lam), beta, col_sq, tol, max_sweeps)


def representatives(lower, upper, interval_size):
    """Interval midpoints, with half-infinite cells moved half a width past the last cut."""
    lo = np.where(np.isneginf(lower), upper - interval_size, lower)
    hi = np.where(np.isposinf(upper), lower + interval_size, upper)
    return 0.5 * (lo + hi)


def _lasso_cv(X, y, folds, n_lambda, ratio):
    n = X.shape[0]
    lam_max = np.max(np.abs(X.T @ y)) / n
    grid = lam_max * ratio ** (np.arange(n_lambda) / max(n_lambda - 1, 1))
    K = folds.max() + 1
    losses = np.zeros((K, n_lambda))
    for k in range(K):
        tr, te = folds != k, folds == k
        beta = None
        for i, lam in enumerate(grid):
            beta = lasso_cd(X[tr], y[tr], lam, beta)
            losses[k, i] = np.mean((y[te] - X[te] @ beta) ** 2)
    i = select_lambda(grid, losses.mean(axis=0))
    beta = None
    for lam in grid[: i + 1]:
        beta = lasso_cd(X, y, lam, beta)
    return beta


def _outside(loc, lower, upper):
    return float(np.mean(~((loc >= lower) & (loc < upper))))


def _replicate(config: SimConfig, seq: np.random.SeedSequence):
    s_x, s_y, s_xt, s_yt, s_cv = seq.spawn(5)
    theta_star = true_theta(config.setting, config.p)
    n_test = config.n_test or config.n
    d = config.interval_size
    if config.setting == LOWDIM:
        X = gen_predictors(config.n, config.p, s_x, intercept=True)
        Xt = gen_predictors(n_test, config.p, s_xt, intercept=True)
        lo, hi = gen_intervals(LOWDIM, X, theta_star, d, s_y)
        lot, hit = gen_intervals(LOWDIM, Xt, theta_star, d, s_yt)
        with np.errstate(divide="ignore"):
            model = build_interval_regression(X, np.log(lo), np.log(hi), family="extreme_value")
        res = fit(model)
        if not res.converged:
            raise FinregError(res.message)
        glm = gamma_glm_irls(X, np.where(np.isposinf(hi), UPPER_CUT + d, hi))
        estimates = {"likelihood": res.theta_hat, "glm": glm}
        # exp(x'theta) is the predicted mean of exp(Y*) under both models
        misclass = {k: _outside(np.exp(Xt @ v), lot, hit) for k, v in estimates.items()}
    else:
        X = gen_predictors(config.n, config.p, s_x)
        Xt = gen_predictors(n_test, config.p, s_xt)
        lo, hi = gen_intervals(HIGHDIM, X, theta_star, d, s_y)
        lot, hit = gen_intervals(HIGHDIM, Xt, theta_star, d, s_yt)
        model = build_interval_regression(X, lo, hi, family="gaussian")
        pen = model.penalty_default
        grid = lambda_path(model, pen, config.n_lambda, config.lambda_ratio)
        seed = int(s_cv.generate_state(1)[0])
        cvres = kfold_cv(model, pen, grid, config.n_folds, seed)
        theta = None
        for lam in grid[: cvres.selected_index + 1]:
            res = fit(model, pen.with_lambdas(lambda1=lam), theta0=theta)
            theta = res.theta_hat
        if not res.converged:
            raise FinregError(res.message)
        folds = fold_assignments(config.n, config.n_folds, seed)
        lasso = _lasso_cv(X, representatives(lo, hi, d), folds, config.n_lambda, config.lambda_ratio)
        estimates = {"likelihood": theta, "lasso": lasso}
        misclass = {k: _outside(Xt @ v, lot, hit) for k, v in estimates.items()}
    sse = {k: float(np.sum((v[:3] - theta_star[:3]) ** 2)) for k, v in estimates.items()}
    return sse, misclass


@dataclass
class SimReport:
    config: dict
    methods: list
    sse_nonzero: dict
    mean_misclass: dict
    mc_standard_errors: dict
    n_failed: int
    per_replication: dict = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "per_replication"}


def run_experiment(config: SimConfig) -> SimReport:
    children = np.random.SeedSequence(config.seed).spawn(config.replications)

    def one(seq):
        try:
            return _replicate(config, seq)
        except (FinregError, np.linalg.LinAlgError) as exc:
            log.warning("replication failed: %s", exc)
            return None

    if config.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as ex:
            results = list(ex.map(one, children))
    else:
        results = [one(s) for s in children]
    ok = [r for r in results if r is not None]
    if not ok:
        raise FinregError("every replication failed")
    methods = list(ok[0][0])
    per = {
        m: {"sse": np.array([r[0][m] for r in ok]), "misclass": np.array([r[1][m] for r in ok])}
        for m in methods
    }
    reps = len(ok)

    def sd(a):
        return float(np.std(a, ddof=1)) if a.size > 1 else 0.0

    return SimReport(
        config=asdict(config),
        methods=methods,
        # summed over replications; its MC standard error scales with sqrt(m)
        sse_nonzero={m: float(per[m]["sse"].sum()) for m in methods},
        mean_misclass={m: float(per[m]["misclass"].mean()) for m in methods},
        mc_standard_errors={
            m: {"sse": math.sqrt(reps) * sd(per[m]["sse"]),
                "misclass": sd(per[m]["misclass"]) / math.sqrt(reps)}
            for m in methods
        },
        n_failed=len(results) - reps,
        per_replication=per,
    )


def run_sweep(config: SimConfig, interval_sizes) -> list:
    out = []
    for size in interval_sizes:
        cfg = SimConfig.from_dict({**asdict(config), "interval_size": float(size)})
        out.append(run_experiment(cfg))
    return out


def tidy_rows(reports) -> list:
    rows = []
    for rep in reports:
        for m in rep.methods:
            for metric, value, se in (
                ("sse", rep.sse_nonzero[m], rep.mc_standard_errors[m]["sse"]),
                ("misclassification", rep.mean_misclass[m], rep.mc_standard_errors[m]["misclass"]),
            ):
                rows.append({
                    "setting": rep.config["setting"],
                    "interval_size": rep.config["interval_size"],
                    "method": m, "metric": metric, "value": value, "mc_se": se,
                    "lower_band": value - 1.96 * se, "upper_band": value + 1.96 * se,
                })
    return rows


def write_reports(reports, outdir) -> dict:
    """Write ``report.json``, ``report.csv`` and tidy ``plot_data.csv`` into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {k: outdir / f for k, f in
             (("json", "report.json"), ("csv", "report.csv"), ("plot", "plot_data.csv"))}
    paths["json"].write_text(json.dumps({"schema_version": 1,
                                         "reports": [r.to_dict() for r in reports]}, indent=2))
    with paths["csv"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "interval_size", "method", "sse_nonzero", "sse_mc_se",
                    "mean_misclass", "misclass_mc_se", "n_failed"])
        for r in reports:
            for m in r.methods:
                w.writerow([r.config["setting"], r.config["interval_size"], m, r.sse_nonzero[m],
                            r.mc_standard_errors[m]["sse"], r.mean_misclass[m],
                            r.mc_standard_errors[m]["misclass"], r.n_failed])
    rows = tidy_rows(reports)
    with paths["plot"].open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return paths
