import numpy as np
import pytest

from finreg.design import build_cumulative, build_interval_regression, build_survival
from finreg.objective import neg_loglik

FAMILIES = ("gaussian", "logistic", "extreme_value")


def bin_latent(y, cuts):
    """Half-open bins [c_j, c_{j+1}) over ``cuts`` padded with -inf/+inf."""
    edges = np.r_[-np.inf, cuts, np.inf]
    k = np.searchsorted(cuts, y, side="right")
    return edges[k], edges[k + 1]


def interval_instance(rng, family, n=60, p=3, scale="known_one", width=1.0):
    X = np.c_[np.ones(n), rng.normal(size=(n, p - 1))]
    beta = rng.normal(scale=0.5, size=p)
    y = X @ beta + rng.logistic(size=n) * 0.8
    cuts = np.arange(-3.0, 3.0 + 1e-9, width)
    lo, hi = bin_latent(y, cuts)
    model = build_interval_regression(X, lo, hi, scale=scale, family=family)
    if scale == "unknown":
        theta = np.r_[rng.uniform(0.5, 1.5), beta + rng.normal(scale=0.2, size=p)]
    else:
        theta = beta + rng.normal(scale=0.2, size=p)
    return model, theta


def cumulative_instance(rng, family, n=60, m=4, p=2):
    X = rng.normal(size=(n, p)) if p else None
    y = rng.integers(1, m + 1, size=n)
    y[:m] = np.arange(1, m + 1)
    model = build_cumulative(y, X, n_categories=m, family=family)
    cuts = np.sort(rng.normal(size=m - 1)) + np.arange(m - 1) * 0.3
    theta = np.r_[cuts, rng.normal(scale=0.3, size=p)]
    return model, theta


def survival_instance(rng, basis="weibull", n=60, p=2):
    X = rng.normal(size=(n, p))
    t = rng.exponential(scale=3.0, size=n)
    cuts = np.array([1.0, 2.0, 4.0, 8.0])
    lo, hi = bin_latent(t, cuts)
    lo = np.where(np.isneginf(lo), 0.0, lo)
    model = build_survival(lo, hi, X, basis=basis)
    beta = rng.normal(scale=0.3, size=p)
    theta = np.r_[rng.uniform(0.6, 1.4), beta] if basis == "weibull" else beta
    return model, theta


def random_instance(rng, family=None, kind=None):
    """A random feasible (model, theta) pair across all model classes."""
    kinds = ("interval", "interval_unknown", "cumulative", "survival_exp", "survival_weibull")
    kind = kinds[rng.integers(len(kinds))] if kind is None else kind
    family = FAMILIES[rng.integers(3)] if family is None else family
    if kind == "interval":
        return interval_instance(rng, family)
    if kind == "interval_unknown":
        return interval_instance(rng, family, scale="unknown")
    if kind == "cumulative":
        return cumulative_instance(rng, family, m=int(rng.integers(2, 6)))
    if kind == "survival_exp":
        return survival_instance(rng, "exponential")
    return survival_instance(rng, "weibull")


def lasso_problem(rng, n=100, d=5, family="gaussian"):
    """Known-scale interval regression with a sparse truth and all slopes penalized."""
    X = rng.normal(size=(n, d))
    beta = np.zeros(d)
    beta[: min(3, d)] = [1.0, -0.7, 0.5][: min(3, d)]
    y = X @ beta + rng.normal(size=n)
    lo, hi = bin_latent(y, np.arange(-4.0, 4.5, 1.0))
    return build_interval_regression(X, lo, hi, family=family)


def kkt_violation(grad, theta, pen):
    """Largest violation of the elastic-net subgradient conditions."""
    v = grad + pen.lambda2 * theta
    r = pen.radius
    out = np.zeros_like(theta)
    zero = theta == 0
    at_bound = zero & (pen.lower_bound == 0)
    free_zero = zero & ~at_bound
    out[free_zero] = np.maximum(np.abs(v[free_zero]) - r[free_zero], 0.0)
    # at a lower bound of 0 only v >= -r is required
    out[at_bound] = np.maximum(-v[at_bound] - r[at_bound], 0.0)
    nz = ~zero
    out[nz] = np.abs(v[nz] + r[nz] * np.sign(theta[nz]))
    return float(np.max(out)) if out.size else 0.0


def penalty(model, lambda1=0.0, lambda2=0.0):
    return model.penalty_default.with_lambdas(lambda1, lambda2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def irls_logistic(X, y, tol=1e-14):
    beta = np.zeros(X.shape[1])
    for _ in range(100):
        p = 1 / (1 + np.exp(-X @ beta))
        step = np.linalg.solve(X.T @ (X * (p * (1 - p))[:, None]), X.T @ (y - p))
        beta += step
        if np.abs(step).max() < tol:
            break
    return beta


def binary_logistic_problem(seed=13, n=200):
    rng = np.random.default_rng(seed)
    X = np.c_[np.ones(n), rng.normal(size=(n, 2))]
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-X @ [0.3, 1.0, -0.8]))).astype(float)
    lo = np.where(y == 1, 0.0, -np.inf)
    hi = np.where(y == 1, np.inf, 0.0)
    return build_interval_regression(X, lo, hi, family="logistic"), X, y


def grid_mle_2d(model, center, half=0.5, step=1e-3, refine=1e-5):
    def search(c, h, s):
        ax = np.arange(-h, h + s / 2, s)
        best, arg = np.inf, None
        for u in ax:
            for w in ax:
                f = neg_loglik(model, c + np.array([u, w]))
                if f < best:
                    best, arg = f, c + np.array([u, w])
        return arg

    coarse = search(np.asarray(center, float), half, step * 20)
    mid = search(coarse, step * 20, step)
    return search(mid, step * 2, refine * 10) if refine else mid
