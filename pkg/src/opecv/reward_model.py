"""Per-action ridge regression used as the direct-method reward model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import InvalidInputError, LoggedDataset, SoftmaxLinearPolicy

DEFAULT_REGULARIZATION = 1e-3


@dataclass(frozen=True, eq=False)
class RewardModel:
    """Linear reward model with one weight vector per action.

    ``per_action_weights`` has shape (m, d + 1) when ``intercept`` is set
    (the last column is the intercept) and (m, d) otherwise.  Actions absent
    from the training data are flagged in ``fitted`` and predict
    ``fallback``, the training-set mean reward.
    """

    per_action_weights: np.ndarray
    regularization: float
    fitted: np.ndarray
    fallback: float
    intercept: bool = True

    @property
    def m(self) -> int:
        return self.per_action_weights.shape[0]

    @property
    def d(self) -> int:
        return self.per_action_weights.shape[1] - int(self.intercept)

    def raw_predictions(self, contexts: np.ndarray) -> np.ndarray:
        """Unclamped predictions for every action, shape (n, m)."""
        x = np.asarray(contexts, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise InvalidInputError(f"contexts must have shape (n, {self.d})")
        w = self.per_action_weights
        if self.intercept:
            out = x @ w[:, :-1].T + w[:, -1]
        else:
            out = x @ w.T
        if not self.fitted.all():
            out[:, ~self.fitted] = self.fallback
        return out

    def predict_all(self, contexts: np.ndarray) -> np.ndarray:
        """Predictions clamped to [0, 1] for every action, shape (n, m)."""
        return np.clip(self.raw_predictions(contexts), 0.0, 1.0)

    def predict(self, context: np.ndarray, action: int) -> float:
        if not 0 <= int(action) < self.m:
            raise InvalidInputError(f"action {action} outside [0, {self.m})")
        x = np.asarray(context, dtype=float).reshape(1, -1)
        return float(self.predict_all(x)[0, int(action)])

    def expected_reward(self, policy: SoftmaxLinearPolicy, context: np.ndarray) -> float:
        x = np.asarray(context, dtype=float).reshape(1, -1)
        return float(self.predict_all(x)[0] @ policy.probs(x)[0])


def fit_ridge(dataset: LoggedDataset, regularization: float = DEFAULT_REGULARIZATION,
              intercept: bool = True) -> RewardModel:
    """Fit ``argmin ||r - X w||^2 + lam ||w||^2`` separately for each action.

    With ``intercept`` the design gets a constant-one column whose
    coefficient is penalised like every other weight.
    """
    if not regularization > 0.0:
        raise InvalidInputError("regularization must be positive")
    x = dataset.contexts
    if intercept:
        x = np.hstack([x, np.ones((dataset.n, 1))])
    p = x.shape[1]
    weights = np.zeros((dataset.m, p))
    fitted = np.zeros(dataset.m, dtype=bool)
    eye = regularization * np.eye(p)
    for a in range(dataset.m):
        mask = dataset.actions == a
        if not mask.any():
            continue
        xa = x[mask]
        gram = xa.T @ xa + eye
        rhs = xa.T @ dataset.rewards[mask]
        try:
            weights[a] = cho_solve(cho_factor(gram), rhs)
        except np.linalg.LinAlgError:
            weights[a] = np.linalg.lstsq(gram, rhs, rcond=None)[0]
        fitted[a] = True
    fallback = float(dataset.rewards.mean()) if dataset.n else 0.0
    weights.setflags(write=False)
    fitted.setflags(write=False)
    return RewardModel(weights, float(regularization), fitted, fallback, intercept)


def predict(model: RewardModel, context: np.ndarray, action: int) -> float:
    return model.predict(context, action)


def expected_reward(model: RewardModel, policy: SoftmaxLinearPolicy, context: np.ndarray) -> float:
    """sum_a pi(a|x) f(x, a)."""
    return model.expected_reward(policy, context)
