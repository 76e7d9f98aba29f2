"""Per-observation affine blocks mapping parameters to interval endpoints.

Observation ``i`` has endpoints ``a_i = z_a . theta + m_a`` and
``b_i = z_b . theta + m_b``.  An infinite endpoint is stored as a flag with a
zero row and zero offset, so it never takes part in arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DataError
from .links import LinkFamily, log_interval_probs

INTERVAL = "interval"
CUMULATIVE = "cumulative"
SURVIVAL = "survival"
GENERIC = "generic"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PenaltySpec:
    """Elastic-net penalty ``lambda1 * sum_j w_j |theta_j| + lambda2/2 ||theta||^2``.

    ``lower_bound`` holds ``0`` or ``-inf`` per coordinate.
    """

    lambda1: float
    lambda2: float
    l1_weight: np.ndarray
    lower_bound: np.ndarray

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("penalty parameters must be nonnegative")
        w = _frozen(self.l1_weight)
        lb = _frozen(self.lower_bound)
        if w.shape != lb.shape or w.ndim != 1:
            raise ValueError("l1_weight and lower_bound must be vectors of equal length")
        if np.any(w < 0):
            raise ValueError("l1 weights must be nonnegative")
        if np.any((lb != 0) & ~np.isneginf(lb)):
            raise ValueError("lower bounds must be 0 or -inf")
        object.__setattr__(self, "l1_weight", w)
        object.__setattr__(self, "lower_bound", lb)

    @classmethod
    def none(cls, d: int) -> "PenaltySpec":
        return cls(0.0, 0.0, np.ones(d), np.full(d, -np.inf))

    @property
    def d(self) -> int:
        return self.l1_weight.shape[0]

    @property
    def is_penalized(self) -> bool:
        return self.lambda2 > 0 or (self.lambda1 > 0 and bool(np.any(self.l1_weight > 0)))

    @property
    def radius(self) -> np.ndarray:
        """Per-coordinate soft-threshold level ``lambda1 * w_j``."""
        return self.lambda1 * self.l1_weight

    def with_lambdas(self, lambda1=None, lambda2=None) -> "PenaltySpec":
        return replace(
            self,
            lambda1=self.lambda1 if lambda1 is None else float(lambda1),
            lambda2=self.lambda2 if lambda2 is None else float(lambda2),
        )

    def subset(self, cols) -> "PenaltySpec":
        return replace(self, l1_weight=self.l1_weight[cols], lower_bound=self.lower_bound[cols])


@dataclass(frozen=True)
class ObservationBlock:
    z_a: np.ndarray
    z_b: np.ndarray
    m_a: float
    m_b: float
    a_infinite: bool = False
    b_infinite: bool = False

    def __post_init__(self):
        za = _frozen(self.z_a)
        zb = _frozen(self.z_b)
        if za.shape != zb.shape or za.ndim != 1:
            raise ValueError("z_a and z_b must be vectors of equal length")
        if self.a_infinite:
            if np.any(za != 0) or self.m_a != -math.inf:
                raise ValueError("an infinite lower endpoint needs z_a = 0 and m_a = -inf")
        if self.b_infinite:
            if np.any(zb != 0) or self.m_b != math.inf:
                raise ValueError("an infinite upper endpoint needs z_b = 0 and m_b = +inf")
        object.__setattr__(self, "z_a", za)
        object.__setattr__(self, "z_b", zb)

    def endpoints(self, theta):
        a = -math.inf if self.a_infinite else float(self.z_a @ theta + self.m_a)
        b = math.inf if self.b_infinite else float(self.z_b @ theta + self.m_b)
        return a, b


@dataclass(frozen=True, eq=False)
class ModelData:
    """Immutable stack of observation blocks plus model metadata.

    The blocks are stored as dense ``(n, d)`` arrays ``za``/``zb`` with offset
    vectors ``ma``/``mb``; offsets of infinite endpoints are stored as 0 and
    the ``a_inf``/``b_inf`` flags carry the infinity.
    """

    za: np.ndarray
    zb: np.ndarray
    ma: np.ndarray
    mb: np.ndarray
    a_inf: np.ndarray
    b_inf: np.ndarray
    family: LinkFamily
    penalty_default: PenaltySpec
    labels: tuple
    kind: str = GENERIC
    theta_init: np.ndarray | None = None
    # coordinates whose natural Wald null is 1 rather than 0
    scale_coords: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        za, zb = _frozen(self.za), _frozen(self.zb)
        if za.ndim != 2 or za.shape != zb.shape:
            raise ValueError("za and zb must be (n, d) arrays of equal shape")
        n, d = za.shape
        a_inf, b_inf = _frozen(self.a_inf, bool), _frozen(self.b_inf, bool)
        ma, mb = _frozen(self.ma), _frozen(self.mb)
        for name, v in (("ma", ma), ("mb", mb), ("a_inf", a_inf), ("b_inf", b_inf)):
            if v.shape != (n,):
                raise ValueError(f"{name} must have length n={n}")
        if np.any(za[a_inf] != 0) or np.any(zb[b_inf] != 0):
            raise ValueError("rows for infinite endpoints must be zero")
        if not np.all(np.isfinite(ma[~a_inf])) or not np.all(np.isfinite(mb[~b_inf])):
            raise ValueError("finite endpoints need finite offsets")
        ma = _frozen(np.where(a_inf, 0.0, ma))
        mb = _frozen(np.where(b_inf, 0.0, mb))
        if self.penalty_default.d != d:
            raise ValueError("penalty dimension does not match d")
        if len(self.labels) != d:
            raise ValueError("need one label per parameter")
        object.__setattr__(self, "za", za)
        object.__setattr__(self, "zb", zb)
        object.__setattr__(self, "ma", ma)
        object.__setattr__(self, "mb", mb)
        object.__setattr__(self, "a_inf", a_inf)
        object.__setattr__(self, "b_inf", b_inf)
        object.__setattr__(self, "family", LinkFamily.parse(self.family))
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.theta_init is not None:
            t0 = _frozen(self.theta_init)
            if t0.shape != (d,):
                raise ValueError("theta_init has the wrong length")
            object.__setattr__(self, "theta_init", t0)

    @property
    def n(self) -> int:
        return self.za.shape[0]

    @property
    def d(self) -> int:
        return self.za.shape[1]

    @property
    def blocks(self) -> list:
        return [self.block(i) for i in range(self.n)]

    def block(self, i: int) -> ObservationBlock:
        return ObservationBlock(
            self.za[i], self.zb[i],
            -math.inf if self.a_inf[i] else float(self.ma[i]),
            math.inf if self.b_inf[i] else float(self.mb[i]),
            bool(self.a_inf[i]), bool(self.b_inf[i]),
        )

    @classmethod
    def from_blocks(cls, blocks: Sequence[ObservationBlock], family, penalty=None,
                    labels=None, **kwargs) -> "ModelData":
        if not blocks:
            raise ValueError("need at least one observation block")
        d = blocks[0].z_a.shape[0]
        if any(b.z_a.shape[0] != d for b in blocks):
            raise ValueError("blocks have inconsistent dimensions")
        return cls(
            za=np.vstack([b.z_a for b in blocks]),
            zb=np.vstack([b.z_b for b in blocks]),
            ma=np.array([0.0 if b.a_infinite else b.m_a for b in blocks]),
            mb=np.array([0.0 if b.b_infinite else b.m_b for b in blocks]),
            a_inf=np.array([b.a_infinite for b in blocks]),
            b_inf=np.array([b.b_infinite for b in blocks]),
            family=family,
            penalty_default=penalty if penalty is not None else PenaltySpec.none(d),
            labels=labels if labels is not None else [f"theta{j + 1}" for j in range(d)],
            **kwargs,
        )

    def endpoints(self, theta):
        """Linear predictors ``(a, b)``; flagged entries hold 0."""
        theta = np.asarray(theta, dtype=float)
        return self.za @ theta + self.ma, self.zb @ theta + self.mb

    def take(self, rows) -> "ModelData":
        """Sub-model restricted to the given observations."""
        rows = np.asarray(rows)
        meta = {}
        for k, v in self.meta.items():
            if k in _ROW_META and v is not None:
                meta[k] = np.asarray(v)[rows]
            else:
                meta[k] = v
        return replace(
            self, za=self.za[rows], zb=self.zb[rows], ma=self.ma[rows], mb=self.mb[rows],
            a_inf=self.a_inf[rows], b_inf=self.b_inf[rows], meta=meta,
        )

    def restrict(self, cols, theta_fixed=None) -> "ModelData":
        """Sub-model over ``cols`` with the remaining coordinates held at ``theta_fixed``."""
        cols = np.asarray(cols, dtype=int)
        rest = np.setdiff1d(np.arange(self.d), cols)
        fixed = np.zeros(self.d) if theta_fixed is None else np.asarray(theta_fixed, float)
        ma = self.ma + self.za[:, rest] @ fixed[rest]
        mb = self.mb + self.zb[:, rest] @ fixed[rest]
        init = None if self.theta_init is None else self.theta_init[cols]
        scale = tuple(int(np.flatnonzero(cols == j)[0]) for j in self.scale_coords if j in cols)
        return replace(
            self, za=self.za[:, cols], zb=self.zb[:, cols], ma=ma, mb=mb,
            penalty_default=self.penalty_default.subset(cols),
            labels=tuple(self.labels[j] for j in cols), theta_init=init,
            scale_coords=scale, meta={**self.meta, "restricted_from": self.d},
        )

    def default_theta(self) -> np.ndarray:
        if self.theta_init is not None:
            return np.array(self.theta_init)
        return np.where(np.isneginf(self.penalty_default.lower_bound), 0.0, 1.0)

    def log_probs(self, theta) -> np.ndarray:
        a, b = self.endpoints(theta)
        return log_interval_probs(self.family, a, b, self.a_inf, self.b_inf)


_ROW_META = ("X", "lower", "upper", "y")


def _as_matrix(X, n=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DataError("predictor matrix must be two-dimensional")
    if n is not None and X.shape[0] != n:
        raise DataError(f"predictor matrix has {X.shape[0]} rows but {n} responses")
    if not np.all(np.isfinite(X)):
        raise DataError("predictors must be finite")
    return X


def _x_labels(p, names):
    if names is None:
        return [f"x{j + 1}" for j in range(p)]
    if len(names) != p:
        raise DataError("need one name per predictor column")
    return list(names)


def build_interval_regression(X, lower, upper, scale="known_one", family="gaussian",
                              names=None) -> ModelData:
    """Interval-censored linear regression ``Y* = x'beta + sigma W``.

    ``scale="known_one"`` fixes ``sigma = 1`` and ``theta = beta``.  With
    ``scale="unknown"`` the parameter is ``[1/sigma, beta/sigma]`` and the
    first coordinate is constrained nonnegative and left unpenalized.
    """
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    n = lower.shape[0]
    if upper.shape[0] != n:
        raise DataError("lower and upper must have equal length")
    X = _as_matrix(X, n)
    p = X.shape[1]
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
        raise DataError("interval endpoints cannot be NaN")
    bad = np.flatnonzero(~(lower < upper))
    if bad.size:
        raise DataError("lower endpoint must be below upper endpoint", row=int(bad[0]))
    if np.any(np.isposinf(lower)) or np.any(np.isneginf(upper)):
        raise DataError("lower cannot be +inf and upper cannot be -inf")
    a_inf, b_inf = np.isneginf(lower), np.isposinf(upper)
    if scale in ("known", "known_one"):
        za = np.where(a_inf[:, None], 0.0, -X)
        zb = np.where(b_inf[:, None], 0.0, -X)
        ma, mb = np.where(a_inf, 0.0, lower), np.where(b_inf, 0.0, upper)
        d = p
        weight, lb = np.ones(d), np.full(d, -np.inf)
        labels = _x_labels(p, names)
        scale_coords = ()
        init = np.zeros(d)
    elif scale == "unknown":
        za = np.hstack([np.where(a_inf, 0.0, lower)[:, None], -X])
        zb = np.hstack([np.where(b_inf, 0.0, upper)[:, None], -X])
        za[a_inf] = 0.0
        zb[b_inf] = 0.0
        ma, mb = np.zeros(n), np.zeros(n)
        d = p + 1
        weight = np.r_[0.0, np.ones(p)]
        lb = np.r_[0.0, np.full(p, -np.inf)]
        labels = ["inv_scale"] + _x_labels(p, names)
        scale_coords = (0,)
        init = np.r_[1.0, np.zeros(p)]
    else:
        raise ValueError(f"unknown scale mode {scale!r}")
    return ModelData(
        za=za, zb=zb, ma=ma, mb=mb, a_inf=a_inf, b_inf=b_inf, family=family,
        penalty_default=PenaltySpec(0.0, 0.0, weight, lb), labels=labels,
        kind=INTERVAL, theta_init=init, scale_coords=scale_coords,
        meta={"X": X, "lower": lower, "upper": upper,
              "scale": "unknown" if scale == "unknown" else "known_one",
              "x_offset": d - p},
    )


def build_cumulative(y, X=None, n_categories=None, family="logistic", names=None) -> ModelData:
    """Cumulative probability model ``P(Y <= j | x) = R(theta_j - x'beta)``.

    Categories are the integers ``1..m``.  The cutpoint coordinates come first
    and are unpenalized.
    """
    y = np.asarray(y).ravel()
    if not np.all(np.equal(np.mod(y, 1), 0)):
        raise DataError("categories must be integers")
    y = y.astype(int)
    n = y.shape[0]
    m = int(n_categories) if n_categories is not None else int(y.max())
    if m < 2:
        raise DataError("need at least two categories")
    bad = np.flatnonzero((y < 1) | (y > m))
    if bad.size:
        raise DataError(f"category out of range 1..{m}", row=int(bad[0]))
    X = np.zeros((n, 0)) if X is None else _as_matrix(X, n)
    p = X.shape[1]
    k = m - 1
    d = k + p
    za = np.zeros((n, d))
    zb = np.zeros((n, d))
    a_inf = y == 1
    b_inf = y == m
    rows = np.arange(n)
    za[rows[~a_inf], y[~a_inf] - 2] = 1.0
    zb[rows[~b_inf], y[~b_inf] - 1] = 1.0
    za[~a_inf, k:] = -X[~a_inf]
    zb[~b_inf, k:] = -X[~b_inf]

    counts = np.bincount(y, minlength=m + 1)[1:]
    cum = np.cumsum(counts)[:-1] / n
    # start at the no-predictor MLE (clipped so every cutpoint is finite)
    init = np.r_[_quantile(family, np.clip(cum, 1e-3, 1 - 1e-3)), np.zeros(p)]
    init[:k] = np.maximum.accumulate(init[:k] + 1e-3 * np.arange(k))
    labels = [f"cut{j + 1}" for j in range(k)] + _x_labels(p, names)
    return ModelData(
        za=za, zb=zb, ma=np.zeros(n), mb=np.zeros(n), a_inf=a_inf, b_inf=b_inf,
        family=family,
        penalty_default=PenaltySpec(0.0, 0.0, np.r_[np.zeros(k), np.ones(p)], np.full(d, -np.inf)),
        labels=labels, kind=CUMULATIVE, theta_init=init,
        meta={"X": X, "y": y, "n_categories": m, "x_offset": k},
    )


def _quantile(family, u):
    from scipy.special import ndtri

    family = LinkFamily.parse(family)
    u = np.asarray(u, float)
    if family is LinkFamily.GAUSSIAN:
        return ndtri(u)
    if family is LinkFamily.LOGISTIC:
        return np.log(u) - np.log1p(-u)
    return np.log(-np.log1p(-u))


def build_survival(cut_lower, cut_upper, X, basis="exponential", basis_lower=None,
                   basis_upper=None, names=None) -> ModelData:
    """Interval-censored survival time with ``F(t) = 1 - exp(-exp(sp(log t) - x'beta))``.

    ``basis`` is ``"exponential"`` (``sp(s) = s``), ``"weibull"``
    (``sp(s) = gamma * s``) or ``"custom"``, in which case ``basis_lower`` and
    ``basis_upper`` hold the ``(n, q)`` basis values ``B(log t)`` at each
    observation's finite cuts (rows at infinite cuts are ignored) and
    ``sp(s) = B(s) . gamma`` with ``gamma >= 0``.
    """
    lo = np.asarray(cut_lower, dtype=float).ravel()
    hi = np.asarray(cut_upper, dtype=float).ravel()
    n = lo.shape[0]
    if hi.shape[0] != n:
        raise DataError("cut_lower and cut_upper must have equal length")
    X = _as_matrix(X, n)
    p = X.shape[1]
    bad = np.flatnonzero(~(lo >= 0) | ~np.isfinite(lo))
    if bad.size:
        raise DataError("survival times must be finite and nonnegative", row=int(bad[0]))
    bad = np.flatnonzero(hi == 0)
    if bad.size:
        raise DataError("upper cut cannot be zero", row=int(bad[0]))
    bad = np.flatnonzero(~(lo < hi))
    if bad.size:
        raise DataError("lower cut must be below upper cut", row=int(bad[0]))
    a_inf = lo == 0
    b_inf = np.isposinf(hi)
    with np.errstate(divide="ignore"):
        log_lo = np.where(a_inf, 0.0, np.log(np.where(a_inf, 1.0, lo)))
        log_hi = np.where(b_inf, 0.0, np.log(np.where(b_inf, 1.0, hi)))
    xa = np.where(a_inf[:, None], 0.0, -X)
    xb = np.where(b_inf[:, None], 0.0, -X)
    xlabels = _x_labels(p, names)
    if basis == "exponential":
        za, zb, ma, mb = xa, xb, log_lo, log_hi
        q = 0
        glabels = []
        scale_coords = ()
    elif basis == "weibull":
        za = np.hstack([log_lo[:, None], xa])
        zb = np.hstack([log_hi[:, None], xb])
        ma, mb = np.zeros(n), np.zeros(n)
        q = 1
        glabels = ["shape"]
        scale_coords = (0,)
    elif basis == "custom":
        if basis_lower is None or basis_upper is None:
            raise DataError("custom basis needs basis_lower and basis_upper values")
        bl = _as_matrix(np.where(a_inf[:, None], 0.0, np.nan_to_num(np.asarray(basis_lower, float))), n)
        bu = _as_matrix(np.where(b_inf[:, None], 0.0, np.nan_to_num(np.asarray(basis_upper, float))), n)
        q = bl.shape[1]
        if bu.shape[1] != q:
            raise DataError("basis_lower and basis_upper need the same number of columns")
        za = np.hstack([bl, xa])
        zb = np.hstack([bu, xb])
        ma, mb = np.zeros(n), np.zeros(n)
        glabels = [f"spline{j + 1}" for j in range(q)]
        scale_coords = ()
    else:
        raise ValueError(f"unknown survival basis {basis!r}")
    za[a_inf] = 0.0
    zb[b_inf] = 0.0
    d = q + p
    weight = np.r_[np.zeros(q), np.ones(p)]
    lb = np.r_[np.zeros(q), np.full(p, -np.inf)]
    init = np.r_[np.ones(q), np.zeros(p)]
    return ModelData(
        za=za, zb=zb, ma=ma, mb=mb, a_inf=a_inf, b_inf=b_inf,
        family=LinkFamily.EXTREME_VALUE,
        penalty_default=PenaltySpec(0.0, 0.0, weight, lb),
        labels=glabels + xlabels, kind=SURVIVAL, theta_init=init, scale_coords=scale_coords,
        meta={"X": X, "lower": lo, "upper": hi, "basis": basis, "x_offset": q},
    )
