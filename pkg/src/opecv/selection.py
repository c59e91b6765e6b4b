"""Estimator selection: off-policy cross-validation and the SLOPE baseline."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    InvalidInputError,
    LoggedDataset,
    SeedLike,
    make_rng,
    mean_and_variance,
    propensity_weights,
    split_sizes,
)
from .estimators import (
    NEEDS_LOGGING,
    NEEDS_MODEL,
    UNBIASED,
    EstimatorSpec,
    Kind,
    PolicyLike,
    _as_probs,
    kernel,
)
from .reward_model import DEFAULT_REGULARIZATION, fit_ridge

MIN_TRAIN_FRACTION = 0.1
MAX_TRAIN_FRACTION = 0.9


def squared_loss(evaluated: float, validator: float) -> float:
    return (validator - evaluated) ** 2


def one_se_score(losses: Sequence[float]) -> float:
    """Mean loss plus the sample standard deviation (ddof 1) of the losses."""
    arr = np.asarray(losses, dtype=float)
    if arr.size < 2:
        raise InvalidInputError("need at least two losses")
    return float(arr.mean() + arr.std(ddof=1))


def selection_regret(chosen_loss: float, candidate_losses: Sequence[float]) -> float:
    """Loss of the chosen estimator minus the best loss among the candidates."""
    if len(candidate_losses) == 0:
        raise InvalidInputError("no candidate losses")
    return float(chosen_loss - min(candidate_losses))


def variance_split_fraction(sigma2_train: float, sigma2_valid: float) -> tuple[float, bool]:
    """Training share ``s_hat / (s_hat + s_tilde)`` clamped to [0.1, 0.9].

    Returns the fraction and whether both variances were zero (then 0.5).
    """
    total = sigma2_train + sigma2_valid
    if not total > 0.0:
        return 0.5, True
    frac = sigma2_train / total
    return min(max(frac, MIN_TRAIN_FRACTION), MAX_TRAIN_FRACTION), False


class Evaluator:
    """Evaluates specs on row subsets of one logged dataset.

    Target/logging distributions are computed once for the full dataset.
    Reward models are fitted on whatever subset an estimator is given and
    cached under a caller-supplied key.
    """

    def __init__(self, dataset: LoggedDataset, target: PolicyLike,
                 logging: Optional[PolicyLike] = None,
                 regularization: float = DEFAULT_REGULARIZATION):
        self.dataset = dataset
        self.pi = _as_probs(target, dataset, "target")
        self.pi0 = _as_probs(logging, dataset, "logging") if logging is not None else None
        self.w = propensity_weights(dataset, self.pi)
        self.regularization = regularization
        self._pred: dict = {}
        self._full: dict = {}

    def predictions(self, idx: Optional[np.ndarray], key) -> np.ndarray:
        if key not in self._pred:
            data = self.dataset if idx is None else self.dataset.subset(idx)
            model = fit_ridge(data, self.regularization)
            self._pred[key] = model.predict_all(data.contexts)
        return self._pred[key]

    def values(self, spec: EstimatorSpec, idx: Optional[np.ndarray] = None,
               key="full") -> np.ndarray:
        if spec.kind in NEEDS_LOGGING and self.pi0 is None:
            raise InvalidInputError(f"{spec.kind} needs the full logging policy")
        sel = slice(None) if idx is None else idx
        pred = self.predictions(idx, key) if spec.kind in NEEDS_MODEL else None
        pi0 = self.pi0[sel] if self.pi0 is not None else None
        ds = self.dataset
        return kernel(spec, ds.rewards[sel], ds.actions[sel], self.w[sel], self.pi[sel], pred, pi0)

    def estimate(self, spec: EstimatorSpec, idx: Optional[np.ndarray] = None,
                 key="full") -> tuple[float, float]:
        if idx is None:
            if spec not in self._full:
                self._full[spec] = mean_and_variance(self.values(spec))
            return self._full[spec]
        return mean_and_variance(self.values(spec, idx, key))


@dataclass
class CandidateStats:
    spec: EstimatorSpec
    estimate: float
    variance: float
    train_fraction: float = float("nan")
    n_train: int = 0
    n_validation: int = 0
    losses: tuple = ()
    mean_loss: float = float("nan")
    std_loss: float = float("nan")
    score: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "estimate": self.estimate,
            "variance": self.variance,
            "train_fraction": self.train_fraction,
            "n_train": self.n_train,
            "n_validation": self.n_validation,
            "losses": list(self.losses),
            "mean_loss": self.mean_loss,
            "std_loss": self.std_loss,
            "score": self.score,
        }


@dataclass
class SlopeState:
    """Candidate estimates and their [v - 2 sigma, v + 2 sigma] intervals, in walk order."""

    estimates: list
    intervals: list
    stop_index: Optional[int]

    def to_dict(self) -> dict:
        return {"estimates": self.estimates, "intervals": [list(iv) for iv in self.intervals],
                "stop_index": self.stop_index}


@dataclass
class SelectionResult:
    method: str
    chosen: EstimatorSpec
    chosen_index: int
    final_estimate: float
    final_variance: float
    per_candidate: list
    validator: Optional[EstimatorSpec] = None
    validator_variance: float = float("nan")
    K: int = 0
    seed: Optional[int] = None
    warnings: list = field(default_factory=list)
    slope: Optional[SlopeState] = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "chosen": self.chosen.to_dict(),
            "chosen_index": self.chosen_index,
            "final_estimate": self.final_estimate,
            "final_variance": self.final_variance,
            "validator": self.validator.to_dict() if self.validator else None,
            "validator_variance": self.validator_variance,
            "K": self.K,
            "seed": self.seed,
            "warnings": list(self.warnings),
            "per_candidate": [c.to_dict() for c in self.per_candidate],
            "slope": self.slope.to_dict() if self.slope else None,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(_finite(self.to_dict()), **kw)


def _finite(obj):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def ocv_select(target: PolicyLike, dataset: LoggedDataset, candidates: Sequence[EstimatorSpec],
               validator: EstimatorSpec = EstimatorSpec(Kind.DR), K: int = 10,
               seed: SeedLike = 0, logging: Optional[PolicyLike] = None, *,
               train_fraction: Optional[float] = None, one_se: bool = True,
               allow_biased_validator: bool = False,
               regularization: float = DEFAULT_REGULARIZATION,
               evaluator: Optional[Evaluator] = None) -> SelectionResult:
    """Off-policy cross-validation.

    Each candidate gets ``K`` Monte Carlo splits whose training share is
    proportional to its variance relative to the validator's (both measured
    on the full data).  Split ``k`` is drawn from sub-seed ``k`` of ``seed``,
    so candidates with equal split sizes share the same partition.  The
    chosen candidate minimises mean loss plus one standard deviation of the
    per-split losses and is re-evaluated on the full dataset.

    ``train_fraction`` fixes the split share instead (ablations), and
    ``one_se=False`` scores by the mean loss alone.
    """
    if K < 2:
        raise InvalidInputError("K must be at least 2")
    if not candidates:
        raise InvalidInputError("no candidates")
    if validator.kind not in UNBIASED and not allow_biased_validator:
        raise InvalidInputError(f"validator {validator} is biased; pass allow_biased_validator")
    n = dataset.n
    if n < 2:
        raise InvalidInputError("need at least two samples")
    ev = evaluator or Evaluator(dataset, target, logging, regularization)

    _, sigma2_valid = ev.estimate(validator)
    perms = [make_rng(seed, k).permutation(n) for k in range(K)]
    # model caches on a shared evaluator must not mix splits of different seeds
    tag = _seed_tag(seed)
    valid_cache: dict = {}
    warnings: list = []
    stats = []
    for spec in candidates:
        est, sigma2 = ev.estimate(spec)
        if train_fraction is None:
            frac, degenerate = variance_split_fraction(sigma2, sigma2_valid)
            if degenerate and "degenerate-variance" not in warnings:
                warnings.append("degenerate-variance")
        else:
            frac = float(train_fraction)
        n_train, n_valid = split_sizes(n, frac)
        losses = []
        for k in range(K):
            key = (tag, k, n_train)
            tr = np.sort(perms[k][:n_train])
            if key not in valid_cache:
                va = np.sort(perms[k][n_train:])
                valid_cache[key] = ev.estimate(validator, va, ("valid",) + key)[0]
            v_hat = ev.estimate(spec, tr, ("train",) + key)[0]
            losses.append(squared_loss(v_hat, valid_cache[key]))
        arr = np.asarray(losses)
        mean = float(arr.mean())
        std = float(arr.std(ddof=1))
        stats.append(CandidateStats(spec, est, sigma2, frac, n_train, n_valid, tuple(losses),
                                    mean, std, mean + std if one_se else mean))
    scores = np.array([c.score for c in stats])
    best = int(np.flatnonzero(scores == scores.min())[0])
    chosen = stats[best]
    return SelectionResult(
        method="ocv", chosen=chosen.spec, chosen_index=best, final_estimate=chosen.estimate,
        final_variance=chosen.variance, per_candidate=stats, validator=validator,
        validator_variance=sigma2_valid, K=K,
        seed=seed if isinstance(seed, int) else None, warnings=warnings)


def _seed_tag(seed: SeedLike) -> tuple:
    if isinstance(seed, np.random.SeedSequence):
        return ("ss", seed.entropy, tuple(seed.spawn_key))
    return ("int", int(seed))


def intervals_overlap(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def slope_walk(intervals: Sequence[tuple[float, float]]) -> tuple[int, Optional[int]]:
    """Return (chosen index, index where the walk stopped or None)."""
    if not intervals:
        raise InvalidInputError("no candidates")
    for j in range(1, len(intervals)):
        if not all(intervals_overlap(intervals[j], intervals[i]) for i in range(j)):
            return j - 1, j
    return len(intervals) - 1, None


def slope_select(ordered_candidates: Sequence[EstimatorSpec], dataset: LoggedDataset,
                 target: PolicyLike, logging: Optional[PolicyLike] = None, *,
                 regularization: float = DEFAULT_REGULARIZATION,
                 evaluator: Optional[Evaluator] = None) -> SelectionResult:
    """Lepski-style selection over candidates given in decreasing-variance order.

    Walks the list and stops at the first candidate whose 95% interval
    misses any earlier interval, returning the candidate before it.
    """
    if not ordered_candidates:
        raise InvalidInputError("no candidates")
    ev = evaluator or Evaluator(dataset, target, logging, regularization)
    stats, intervals = [], []
    for spec in ordered_candidates:
        est, var = ev.estimate(spec)
        sd = math.sqrt(var)
        stats.append(CandidateStats(spec, est, var))
        intervals.append((est - 2.0 * sd, est + 2.0 * sd))
    best, stop = slope_walk(intervals)
    chosen = stats[best]
    return SelectionResult(
        method="slope", chosen=chosen.spec, chosen_index=best, final_estimate=chosen.estimate,
        final_variance=chosen.variance, per_candidate=stats,
        slope=SlopeState([c.estimate for c in stats], intervals, stop))
