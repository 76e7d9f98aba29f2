"""Average negative log-likelihood, its derivatives and the elastic-net objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import ModelData, PenaltySpec
from .errors import InfeasibleError
from .links import interval_derivatives, log_interval_probs


@dataclass
class ObjectiveState:
    """Cached linear predictors ``eta_i = Z_i theta + m_i`` at ``theta``.

    ``logp`` holds per-observation log-probabilities, ``value`` the average
    negative log-likelihood (``+inf`` when some interval is empty).
    """

    theta: np.ndarray
    eta_a: np.ndarray
    eta_b: np.ndarray
    logp: np.ndarray
    value: float

    @classmethod
    def at(cls, model: ModelData, theta) -> "ObjectiveState":
        theta = np.asarray(theta, dtype=float)
        a, b = model.endpoints(theta)
        logp = log_interval_probs(model.family, a, b, model.a_inf, model.b_inf)
        value = -float(np.sum(logp)) / model.n
        if np.isnan(value):
            value = np.inf
        return cls(theta, a, b, logp, value)

    @property
    def feasible(self) -> bool:
        return np.isfinite(self.value)

    def derivatives(self, model: ModelData):
        if not self.feasible:
            raise InfeasibleError("derivatives requested at an infeasible parameter")
        return interval_derivatives(model.family, self.eta_a, self.eta_b,
                                    model.a_inf, model.b_inf, logp=self.logp)


def neg_loglik(model: ModelData, theta) -> float:
    return ObjectiveState.at(model, theta).value


def _grad(model, g1, g2):
    return -(model.za.T @ g1 + model.zb.T @ g2) / model.n


def _hess(model, h11, h12, h22):
    za, zb = model.za, model.zb
    cross = za.T @ (h12[:, None] * zb)
    H = za.T @ (h11[:, None] * za) + zb.T @ (h22[:, None] * zb) + cross + cross.T
    H = -H / model.n
    return 0.5 * (H + H.T)


def neg_loglik_grad(model: ModelData, theta) -> np.ndarray:
    g1, g2, *_ = ObjectiveState.at(model, theta).derivatives(model)
    return _grad(model, g1, g2)


def neg_loglik_hess(model: ModelData, theta) -> np.ndarray:
    _, _, h11, h12, h22 = ObjectiveState.at(model, theta).derivatives(model)
    return _hess(model, h11, h12, h22)


def value_grad_hess(model: ModelData, theta):
    st = ObjectiveState.at(model, theta)
    g1, g2, h11, h12, h22 = st.derivatives(model)
    return st.value, _grad(model, g1, g2), _hess(model, h11, h12, h22)


def penalty_value(theta, pen: PenaltySpec) -> float:
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < pen.lower_bound):
        return np.inf
    return float(pen.lambda1 * np.sum(pen.l1_weight * np.abs(theta))
                 + 0.5 * pen.lambda2 * theta @ theta)


def penalized_obj(model: ModelData, theta, pen: PenaltySpec | None = None) -> float:
    """``G_n(theta) + lambda1 sum_j w_j |theta_j| + lambda2/2 ||theta||^2``."""
    pen = model.penalty_default if pen is None else pen
    p = penalty_value(theta, pen)
    if not np.isfinite(p):
        return np.inf
    return neg_loglik(model, theta) + p
