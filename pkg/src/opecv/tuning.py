"""Hyper-parameter grids and the estimator-specific tuning rules."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import InvalidInputError, LoggedDataset, mean_and_variance, propensity_weights
from .estimators import (
    EstimatorSpec,
    Kind,
    PolicyLike,
    TUNABLE,
    _as_probs,
    _model_predictions,
    kernel,
    parse_kind,
    shrink_weights,
)
from .reward_model import RewardModel

log = logging.getLogger(__name__)

GRID_SIZE = 30
GROUP_IPS_GRID = (2, 4, 8, 16, 32)
R_MAX = 1.0
DEFAULT_DELTA = 0.05
# grid floor when no logged action has positive weight
MIN_WEIGHT = 1e-6


class MonotonicityError(RuntimeError):
    """The IPS-lambda tuning equation is not monotone on [0, 1]."""


@dataclass(frozen=True)
class HyperGrid:
    """Ordered hyper-parameter values of one estimator.

    ``variance_order`` says whether estimator variance grows ("increasing")
    or shrinks ("decreasing") along ``values``.
    """

    kind: Kind
    values: tuple
    variance_order: str = "increasing"

    def __post_init__(self):
        object.__setattr__(self, "kind", parse_kind(self.kind))
        vals = tuple(self.values)
        if not vals:
            raise InvalidInputError("grid must not be empty")
        diffs = np.diff(np.asarray(vals, dtype=float))
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise InvalidInputError("grid values must be strictly monotone")
        if self.variance_order not in ("increasing", "decreasing"):
            raise InvalidInputError("variance_order must be 'increasing' or 'decreasing'")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def by_decreasing_variance(self) -> tuple:
        """Values in the order SLOPE walks them."""
        return tuple(reversed(self.values)) if self.variance_order == "increasing" else self.values


def geometric_grid(lo: float, hi: float, count: int) -> np.ndarray:
    if not (lo > 0.0 and hi > lo):
        raise InvalidInputError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    if count < 2:
        raise InvalidInputError("count must be at least 2")
    t = np.arange(count) / (count - 1)
    out = lo * (hi / lo) ** t
    out[0], out[-1] = lo, hi
    return out


def _weights(dataset: LoggedDataset, target: PolicyLike) -> np.ndarray:
    return propensity_weights(dataset, _as_probs(target, dataset, "target"))


def nearest_rank_quantile(values: np.ndarray, q: float) -> float:
    if not 0.0 <= q <= 1.0:
        raise InvalidInputError("q must lie in [0, 1]")
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise InvalidInputError("no values")
    rank = max(1, math.ceil(q * v.size))
    return float(v[rank - 1])


def weight_quantile(dataset: LoggedDataset, target: PolicyLike, q: float) -> float:
    """Nearest-rank quantile of the logged propensity weights."""
    return nearest_rank_quantile(_weights(dataset, target), q)


def _weight_range(w: np.ndarray, square: bool = False) -> tuple[float, float]:
    lo = nearest_rank_quantile(w, 0.05)
    if not lo > 0.0:
        # target excludes most logged actions: start at the smallest positive weight
        pos = w[w > 0.0]
        lo = float(pos.min()) if pos.size else MIN_WEIGHT
    hi = max(nearest_rank_quantile(w, 0.95), lo)
    if hi <= lo * (1.0 + 1e-9):
        lo, hi = lo / 2.0, lo * 2.0
    if square:
        lo, hi = 0.01 * lo * lo, 100.0 * hi * hi
    return lo, hi


def theory_truncation(n: int) -> float:
    """M = sqrt(n)."""
    if n < 1:
        raise InvalidInputError("n must be positive")
    return math.sqrt(n)


def sigmoid(h):
    return 1.0 / (1.0 + np.exp(-np.asarray(h, dtype=float)))


def default_grid(kind: Kind | str, dataset: LoggedDataset, target: PolicyLike) -> HyperGrid:
    kind = parse_kind(kind)
    if kind not in TUNABLE:
        raise InvalidInputError(f"{kind} has no hyper-parameter")
    if kind is Kind.GROUP_IPS:
        return HyperGrid(kind, GROUP_IPS_GRID, "increasing")
    if kind is Kind.IPS_LAMBDA:
        vals = sigmoid(np.linspace(-10.0, 10.0, GRID_SIZE))
        return HyperGrid(kind, tuple(float(v) for v in vals), "decreasing")
    w = _weights(dataset, target)
    lo, hi = _weight_range(w, square=kind is Kind.DROS)
    vals = geometric_grid(lo, hi, GRID_SIZE)
    if kind is Kind.TRUNCATED_IPS:
        vals = np.unique(np.append(vals, theory_truncation(dataset.n)))
    return HyperGrid(kind, tuple(float(v) for v in vals), "increasing")


def candidates_from_grid(kind: Kind | str, grid: HyperGrid | Sequence[float]) -> list[EstimatorSpec]:
    kind = parse_kind(kind)
    values = grid.values if isinstance(grid, HyperGrid) else tuple(grid)
    if not values:
        raise InvalidInputError("empty grid")
    return [EstimatorSpec(kind, v) for v in values]


def _grid_argmin(values: Sequence[float], objective: np.ndarray) -> float:
    """Smallest grid value among the minimisers of ``objective``."""
    vals = np.asarray(values, dtype=float)
    obj = np.asarray(objective, dtype=float)
    best = np.flatnonzero(obj == obj.min())
    return float(vals[best[np.argmin(vals[best])]])


def switch_dr_objective(dataset: LoggedDataset, target: PolicyLike,
                        model: Optional[RewardModel], grid: Sequence[float],
                        logging: Optional[PolicyLike] = None) -> np.ndarray:
    """Variance plus squared pessimistic bias of SwitchDR at each threshold.

    The bias charges ``R_MAX`` for the target mass on actions whose weight
    exceeds the threshold.  With the full logging policy this mass is exact;
    without it, the logged weights give an importance-weighted estimate of it.
    """
    pi = _as_probs(target, dataset, "target")
    w = propensity_weights(dataset, pi)
    pred = _model_predictions(dataset, model)
    if logging is not None:
        pi0 = _as_probs(logging, dataset, "logging")
        with np.errstate(divide="ignore", invalid="ignore"):
            w_all = pi / pi0
    out = []
    for tau in grid:
        v = kernel(EstimatorSpec(Kind.SWITCH_DR, tau), dataset.rewards, dataset.actions, w, pi, pred)
        var = mean_and_variance(v)[1]
        if logging is not None:
            bias = float(np.where(w_all > tau, pi, 0.0).sum(axis=1).mean()) * R_MAX
        else:
            bias = float(np.where(w > tau, w, 0.0).mean()) * R_MAX
        out.append(var + bias * bias)
    return np.asarray(out)


def tune_switch_dr(dataset: LoggedDataset, target: PolicyLike, model: Optional[RewardModel],
                   grid: HyperGrid | Sequence[float],
                   logging: Optional[PolicyLike] = None) -> float:
    values = grid.values if isinstance(grid, HyperGrid) else tuple(grid)
    if not values:
        raise InvalidInputError("empty grid")
    return _grid_argmin(values, switch_dr_objective(dataset, target, model, values, logging))


def dr_shrink_objective(dataset: LoggedDataset, target: PolicyLike,
                        model: Optional[RewardModel], grid: Sequence[float],
                        mode: str) -> np.ndarray:
    pi = _as_probs(target, dataset, "target")
    w = propensity_weights(dataset, pi)
    pred = _model_predictions(dataset, model)
    kind = Kind.DROS if mode == "optimistic" else Kind.DRPS
    resid = dataset.rewards - pred[np.arange(dataset.n), dataset.actions]
    out = []
    for lam in grid:
        v = kernel(EstimatorSpec(kind, lam), dataset.rewards, dataset.actions, w, pi, pred)
        var = mean_and_variance(v)[1]
        bias = float(np.mean((shrink_weights(w, lam, mode) - w) * resid))
        out.append(var + bias * bias)
    return np.asarray(out)


def tune_dr_shrink(dataset: LoggedDataset, target: PolicyLike, model: Optional[RewardModel],
                   grid: HyperGrid | Sequence[float], mode: str = "optimistic") -> float:
    if mode not in ("optimistic", "pessimistic"):
        raise InvalidInputError("mode must be 'optimistic' or 'pessimistic'")
    values = grid.values if isinstance(grid, HyperGrid) else tuple(grid)
    if not values:
        raise InvalidInputError("empty grid")
    return _grid_argmin(values, dr_shrink_objective(dataset, target, model, values, mode))


def _log_power_weights(log_w: np.ndarray, lam: float, s: float) -> np.ndarray:
    """log of ((1 - lam) w^s + lam)^(1/s), evaluated without overflow."""
    with np.errstate(divide="ignore"):
        a = np.log1p(-lam) + s * log_w if lam < 1.0 else np.full_like(log_w, -np.inf)
        b = math.log(lam) if lam > 0.0 else -np.inf
    return np.logaddexp(a, b) / s


def ips_lambda_equation(w: np.ndarray, delta: float):
    """g(lam) = lam^2 mean(w_{lam,s}^2) - 2 log(1/delta) / (3n), with s = n^(1/4)."""
    n = w.shape[0]
    s = n ** 0.25
    rhs = 2.0 * math.log(1.0 / delta) / (3.0 * n)
    with np.errstate(divide="ignore"):
        log_w = np.log(w)

    def g(lam: float) -> float:
        if lam == 0.0:
            return -rhs
        lw = _log_power_weights(log_w, lam, s)
        log_lhs = 2.0 * math.log(lam) + float(logsumexp(2.0 * lw)) - math.log(n)
        return (math.exp(log_lhs) if log_lhs < 700.0 else math.inf) - rhs

    return g


def tune_ips_lambda(dataset: LoggedDataset, target: PolicyLike, delta: float = DEFAULT_DELTA,
                    tol: float = 1e-10, strict: bool = False) -> float:
    """Root of the IPS-lambda tuning equation in [0, 1], found by bisection.

    The left-hand side is checked for monotonicity on 100 points first.  It
    can turn down near ``lam = 1`` when weights are large; ``strict`` then
    raises :class:`MonotonicityError`, otherwise bisection runs on the
    first sign change, i.e. the smallest root.
    """
    if not 0.0 < delta <= 1.0:
        raise InvalidInputError("delta must lie in (0, 1)")
    if delta == 1.0:
        return 0.0
    w = _weights(dataset, target)
    g = ips_lambda_equation(w, delta)
    grid = np.linspace(0.0, 1.0, 100)
    gv = np.array([g(x) for x in grid])
    with np.errstate(invalid="ignore"):
        falling = np.diff(gv) < -1e-15 * np.maximum(1.0, np.abs(gv[1:]))
    if np.any(falling):
        msg = (f"IPS-lambda equation not monotone on [0, 1] (g range "
               f"{gv.min():.3g}..{gv.max():.3g}, max weight {w.max():.3g})")
        if strict:
            raise MonotonicityError(msg)
        log.debug(msg)
    if gv[0] > 0.0:
        return 0.0
    crossing = np.flatnonzero(gv >= 0.0)
    if crossing.size == 0:
        return 1.0
    hi_i = int(crossing[0])
    lo, hi = float(grid[hi_i - 1]), float(grid[hi_i])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
