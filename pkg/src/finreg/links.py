"""Log-concave latent densities and the interval log-probability map.

Every family exposes ``log R``, ``log (1 - R)``, ``log r`` and the score
``d/dw log r(w)``.  Working in log space keeps interval probabilities
accurate deep in either tail, which is where censored observations live.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, expit

from .errors import InfeasibleError

# exp() arguments are clamped to this range before exponentiation
EXP_MIN = -745.0
EXP_MAX = 709.0
LOG_TINY = math.log(np.finfo(float).tiny)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class LinkFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LOGISTIC = "logistic"
    EXTREME_VALUE = "extreme_value"

    @classmethod
    def parse(cls, value) -> "LinkFamily":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown link family {value!r}") from None

    @property
    def median(self) -> float:
        if self is LinkFamily.EXTREME_VALUE:
            return math.log(math.log(2.0))
        return 0.0


def _exp(x):
    return np.exp(np.clip(x, EXP_MIN, EXP_MAX))


def log1mexp(x):
    """``log(1 - exp(x))`` for ``x <= 0``, accurate on both sides of -log 2."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    neg = x < 0
    near = neg & (x > -math.log(2.0))
    far = neg & ~near
    out[near] = np.log(-np.expm1(x[near]))
    out[far] = np.log1p(-np.exp(x[far]))
    return out


def log_cdf(family: LinkFamily, w):
    w = np.asarray(w, dtype=float)
    if family is LinkFamily.GAUSSIAN:
        return log_ndtr(w)
    if family is LinkFamily.LOGISTIC:
        return -np.logaddexp(0.0, -w)
    # extreme value: log(1 - exp(-e^w))
    ew = _exp(w)
    out = np.empty(w.shape)
    small = w < -30.0
    out[small] = w[small] - 0.5 * ew[small]
    big = ~small
    out[big] = log1mexp(-ew[big])
    return out


def log_sf(family: LinkFamily, w):
    w = np.asarray(w, dtype=float)
    if family is LinkFamily.GAUSSIAN:
        return log_ndtr(-w)
    if family is LinkFamily.LOGISTIC:
        return -np.logaddexp(0.0, w)
    return -_exp(w)


def log_pdf(family: LinkFamily, w):
    w = np.asarray(w, dtype=float)
    if family is LinkFamily.GAUSSIAN:
        return -0.5 * w * w - _LOG_SQRT_2PI
    if family is LinkFamily.LOGISTIC:
        return -np.logaddexp(0.0, -w) - np.logaddexp(0.0, w)
    return w - _exp(w)


def score(family: LinkFamily, w):
    """Derivative of ``log r`` at ``w``, i.e. ``r'(w) / r(w)``."""
    w = np.asarray(w, dtype=float)
    if family is LinkFamily.GAUSSIAN:
        return -w
    if family is LinkFamily.LOGISTIC:
        return -np.tanh(0.5 * w)
    return 1.0 - _exp(w)


def cdf(family: LinkFamily, w):
    w = np.asarray(w, dtype=float)
    if family is LinkFamily.GAUSSIAN:
        return ndtr(w)
    if family is LinkFamily.LOGISTIC:
        return expit(w)
    return -np.expm1(-_exp(w))


def family_eval(family, w: float) -> dict:
    """CDF, density, density derivative and log density at a finite ``w``."""
    family = LinkFamily.parse(family)
    if not math.isfinite(w):
        raise ValueError("family_eval needs a finite argument")
    lr = float(log_pdf(family, w))
    r = math.exp(lr)
    return {
        "R": float(cdf(family, w)),
        "r": r,
        "r_prime": r * float(score(family, w)),
        "log_r": lr,
    }


@dataclass(frozen=True)
class IntervalEndpoints:
    """Interval ``[t1, t2)`` on the latent scale with explicit infinity flags.

    ``t1`` is ignored when ``lower_inf`` is set and ``t2`` when ``upper_inf``
    is set.
    """

    t1: float = 0.0
    t2: float = 0.0
    lower_inf: bool = False
    upper_inf: bool = False

    @classmethod
    def from_values(cls, t1: float, t2: float) -> "IntervalEndpoints":
        if t1 == math.inf or t2 == -math.inf:
            raise ValueError("lower endpoint cannot be +inf nor upper -inf")
        lo_inf = t1 == -math.inf
        hi_inf = t2 == math.inf
        return cls(0.0 if lo_inf else float(t1), 0.0 if hi_inf else float(t2), lo_inf, hi_inf)


def _flags(t1, t2, lower_inf, upper_inf):
    t1 = np.atleast_1d(np.asarray(t1, dtype=float))
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    t1, t2 = np.broadcast_arrays(t1, t2)
    lower_inf = np.isneginf(t1) if lower_inf is None else np.broadcast_to(np.asarray(lower_inf, bool), t1.shape)
    upper_inf = np.isposinf(t2) if upper_inf is None else np.broadcast_to(np.asarray(upper_inf, bool), t2.shape)
    # flagged coordinates never enter arithmetic
    t1 = np.where(lower_inf, 0.0, t1)
    t2 = np.where(upper_inf, 0.0, t2)
    return t1, t2, lower_inf, upper_inf


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_LOG_GL_WEIGHTS = np.log(_GL_WEIGHTS)
# intervals with width * (1 + |score|) below this are integrated directly
NARROW = 0.5


def _narrow(family, a, b):
    h = b - a
    return (h <= NARROW) & (h * (1.0 + np.abs(score(family, a)) + np.abs(score(family, b))) <= NARROW)


def _log_quad(family, a, b):
    # Gauss-Legendre in log space; differencing CDFs would cancel here
    half = 0.5 * (b - a)
    x = 0.5 * (a + b)[:, None] + half[:, None] * _GL_NODES[None, :]
    terms = log_pdf(family, x) + _LOG_GL_WEIGHTS[None, :]
    top = terms.max(axis=1)
    return np.log(half) + top + np.log(np.exp(terms - top[:, None]).sum(axis=1))


def log_interval_probs(family, t1, t2, lower_inf=None, upper_inf=None) -> np.ndarray:
    """Vectorised ``log{R(t2) - R(t1)}``.

    When the flags are omitted they are read off IEEE infinities in ``t1`` and
    ``t2``.  Empty or inverted finite intervals give ``-inf``.
    """
    family = LinkFamily.parse(family)
    t1, t2, lo_inf, hi_inf = _flags(t1, t2, lower_inf, upper_inf)
    out = np.zeros(t1.shape)

    only_hi = lo_inf & ~hi_inf
    out[only_hi] = log_cdf(family, t2[only_hi])
    only_lo = hi_inf & ~lo_inf
    out[only_lo] = log_sf(family, t1[only_lo])

    both = ~lo_inf & ~hi_inf
    empty = both & (t2 <= t1)
    out[empty] = -np.inf
    ok = both & ~empty
    if ok.any():
        a, b = t1[ok], t2[ok]
        res = np.empty(a.shape)
        narrow = _narrow(family, a, b)
        if narrow.any():
            res[narrow] = _log_quad(family, a[narrow], b[narrow])
        right = ~narrow & (a >= family.median)
        if right.any():
            sa = log_sf(family, a[right])
            sb = log_sf(family, b[right])
            res[right] = sa + log1mexp(sb - sa)
        left = ~narrow & ~right
        if left.any():
            ra = log_cdf(family, a[left])
            rb = log_cdf(family, b[left])
            res[left] = rb + log1mexp(ra - rb)
        out[ok] = res
    return out


def log_interval_prob(family, e: IntervalEndpoints) -> float:
    return float(log_interval_probs(family, e.t1, e.t2, e.lower_inf, e.upper_inf)[0])


def _score_plus_hazard(family, w):
    # s(w) + r(w)/(1 - R(w)) without cancellation in the right tail
    if family is LinkFamily.EXTREME_VALUE:
        return np.ones_like(w)
    if family is LinkFamily.LOGISTIC:
        return expit(-w)
    return _exp(log_pdf(family, w) - log_sf(family, w)) - w


def _score_minus_rev_hazard(family, w):
    # s(w) - r(w)/R(w) without cancellation in the left tail
    if family is LinkFamily.LOGISTIC:
        return -expit(w)
    if family is LinkFamily.EXTREME_VALUE:
        # 1 - u - u / expm1(u) with u = e^w; series for small u
        u = _exp(w)
        small = u < 1e-3
        out = np.empty_like(u)
        us = u[small]
        out[small] = -us / 2 - us * us / 12 + us ** 4 / 720
        ub = u[~small]
        out[~small] = 1.0 - ub - ub * _exp(-ub) / -np.expm1(-ub)
        return out
    return score(family, w) - _exp(log_pdf(family, w) - log_cdf(family, w))


def _odds(log_rho):
    # rho / (1 - rho) from log(rho), rho in [0, 1)
    out = np.zeros(log_rho.shape)
    fin = np.isfinite(log_rho)
    out[fin] = _exp(log_rho[fin] - log1mexp(log_rho[fin]))
    return out


def interval_derivatives(family, t1, t2, lower_inf=None, upper_inf=None, logp=None):
    """Gradient and Hessian entries of ``log{R(t2) - R(t1)}``.

    Returns ``(g1, g2, h11, h12, h22)`` as arrays.  Rows and columns that
    belong to an infinite endpoint are exactly zero.  Raises
    :class:`InfeasibleError` if any finite interval is empty.
    """
    family = LinkFamily.parse(family)
    t1, t2, lo_inf, hi_inf = _flags(t1, t2, lower_inf, upper_inf)
    both = ~lo_inf & ~hi_inf
    if np.any(both & (t2 <= t1)):
        raise InfeasibleError("interval derivatives requested at an empty interval")
    if logp is None:
        logp = log_interval_probs(family, t1, t2, lo_inf, hi_inf)
    # D itself may underflow but log D only does so for intervals narrower
    # than rounding; floor those at the smallest normal number
    log_d = np.where(np.isneginf(logp), LOG_TINY, logp)

    q1 = np.where(lo_inf, 0.0, _exp(log_pdf(family, t1) - log_d))
    q2 = np.where(hi_inf, 0.0, _exp(log_pdf(family, t2) - log_d))
    s1 = np.where(lo_inf, 0.0, score(family, t1))
    s2 = np.where(hi_inf, 0.0, score(family, t2))

    g1 = -q1
    g2 = q2
    h11 = -s1 * q1 - q1 * q1
    h22 = s2 * q2 - q2 * q2
    h12 = q1 * q2

    # -s - q and s - q cancel in the tails; rewrite them through (reverse)
    # hazards and rho = S(t2)/S(t1) or R(t1)/R(t2)
    wide = ~both.copy()
    if both.any():
        wide[both] = ~_narrow(family, t1[both], t2[both])
    right = wide & ~lo_inf & (hi_inf | (t1 >= family.median))
    if right.any():
        a = t1[right]
        log_rho = np.where(hi_inf[right], -np.inf, log_sf(family, t2[right]) - log_sf(family, a))
        haz = _exp(log_pdf(family, a) - log_sf(family, a))
        h11[right] = -q1[right] * (_score_plus_hazard(family, a) + haz * _odds(log_rho))
    left = wide & ~hi_inf & (lo_inf | (t1 < family.median))
    if left.any():
        b = t2[left]
        log_rho = np.where(lo_inf[left], -np.inf, log_cdf(family, t1[left]) - log_cdf(family, b))
        rhaz = _exp(log_pdf(family, b) - log_cdf(family, b))
        h22[left] = q2[left] * (_score_minus_rev_hazard(family, b) - rhaz * _odds(log_rho))
    return g1, g2, h11, h12, h22


def interval_grad_hess(family, e: IntervalEndpoints):
    """Gradient (length 2) and 2x2 Hessian of the interval log-probability."""
    if not e.lower_inf and not e.upper_inf and e.t2 <= e.t1:
        raise InfeasibleError(f"empty interval [{e.t1}, {e.t2})")
    g1, g2, h11, h12, h22 = interval_derivatives(family, e.t1, e.t2, e.lower_inf, e.upper_inf)
    g = np.array([g1[0], g2[0]])
    H = np.array([[h11[0], h12[0]], [h12[0], h22[0]]])
    return g, H
