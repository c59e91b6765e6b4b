"""Off-policy value estimators expressed as per-sample contributions.

Every estimator here is an average over logged samples, so each one is
implemented as a function returning the vector of per-sample contributions
``v_i``; the estimate is their mean and ``mean_and_variance`` yields the
variance used by the selection procedures.

``target`` and ``logging`` arguments accept either a
:class:`~opecv.core.SoftmaxLinearPolicy` or a precomputed ``(n, m)`` matrix
of action probabilities aligned with the dataset rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Union

import numpy as np

from .core import (
    InvalidInputError,
    LoggedDataset,
    NumericalDegeneracyError,
    PerSampleValues,
    SoftmaxLinearPolicy,
    mean_and_variance,
    propensity_weights,
)
from .reward_model import DEFAULT_REGULARIZATION, RewardModel, fit_ridge

PolicyLike = Union[SoftmaxLinearPolicy, np.ndarray]


class Kind(str, Enum):
    IPS = "IPS"
    DM = "DM"
    DR = "DR"
    TRUNCATED_IPS = "TruncatedIPS"
    SWITCH_DR = "SwitchDR"
    CAB = "CAB"
    DROS = "DRos"
    DRPS = "DRps"
    IPS_LAMBDA = "IPSLambda"
    GROUP_IPS = "GroupIPS"

    def __str__(self) -> str:
        return self.value


TUNABLE = frozenset({Kind.TRUNCATED_IPS, Kind.SWITCH_DR, Kind.CAB, Kind.DROS, Kind.DRPS,
                     Kind.IPS_LAMBDA, Kind.GROUP_IPS})
NEEDS_MODEL = frozenset({Kind.DM, Kind.DR, Kind.SWITCH_DR, Kind.CAB, Kind.DROS, Kind.DRPS,
                         Kind.GROUP_IPS})
NEEDS_LOGGING = frozenset({Kind.CAB, Kind.GROUP_IPS})
UNBIASED = frozenset({Kind.IPS, Kind.DR})


def parse_kind(name: str | Kind) -> Kind:
    if isinstance(name, Kind):
        return name
    key = name.replace("-", "").replace("_", "").lower()
    for k in Kind:
        if k.value.lower() == key:
            return k
    raise InvalidInputError(f"unknown estimator kind {name!r}")


@dataclass(frozen=True)
class EstimatorSpec:
    """One selection candidate: an estimator kind and its hyper-parameter."""

    kind: Kind
    hyper: Optional[float] = None

    def __post_init__(self):
        kind = parse_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        h = self.hyper
        if kind in TUNABLE:
            if h is None:
                raise InvalidInputError(f"{kind} needs a hyper-parameter")
            h = float(h)
            if math.isnan(h) or h < 0.0:
                raise InvalidInputError(f"{kind} hyper-parameter must be non-negative")
            if kind is Kind.IPS_LAMBDA and h > 1.0:
                raise InvalidInputError("IPSLambda hyper-parameter must lie in [0, 1]")
            if kind is Kind.GROUP_IPS:
                if h != int(h) or h < 1:
                    raise InvalidInputError("GroupIPS cluster count must be an integer >= 1")
                h = int(h)
            object.__setattr__(self, "hyper", h)
        elif h is not None:
            raise InvalidInputError(f"{kind} takes no hyper-parameter")

    @property
    def label(self) -> str:
        if self.hyper is None:
            return self.kind.value
        return f"{self.kind.value}({self.hyper:.6g})"

    def __str__(self) -> str:
        return self.label

    def to_dict(self) -> dict:
        h = self.hyper
        if isinstance(h, float) and math.isinf(h):
            h = "inf"
        return {"kind": self.kind.value, "hyper": h}

    @classmethod
    def from_dict(cls, obj: dict) -> "EstimatorSpec":
        h = obj.get("hyper")
        if isinstance(h, str):
            h = float(h)
        return cls(parse_kind(obj["kind"]), h)

    @classmethod
    def parse(cls, text: str) -> "EstimatorSpec":
        """Parse ``KIND`` or ``KIND:HYPER`` (e.g. ``TruncatedIPS:10``)."""
        kind, _, hyper = text.partition(":")
        return cls(parse_kind(kind.strip()), float(hyper) if hyper.strip() else None)


def _as_probs(policy: PolicyLike, dataset: LoggedDataset, what: str) -> np.ndarray:
    if isinstance(policy, SoftmaxLinearPolicy):
        if policy.m != dataset.m:
            raise InvalidInputError(f"{what} policy has {policy.m} actions, data has {dataset.m}")
        return policy.probs(dataset.contexts)
    p = np.asarray(policy, dtype=float)
    if p.shape != (dataset.n, dataset.m):
        raise InvalidInputError(f"{what} probabilities must have shape ({dataset.n}, {dataset.m})")
    return p


def _model_predictions(dataset: LoggedDataset, model: Optional[RewardModel]) -> np.ndarray:
    if model is None:
        model = fit_ridge(dataset, DEFAULT_REGULARIZATION)
    return model.predict_all(dataset.contexts)


# ---------------------------------------------------------------------------
# array kernels; ``pred`` is the (n, m) matrix of clamped model predictions

def _rows(n: int) -> np.ndarray:
    return np.arange(n)


def _dm(pi: np.ndarray, pred: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", pi, pred)


def _residual(r, actions, pred) -> np.ndarray:
    return r - pred[_rows(r.shape[0]), actions]


def shrink_weights(w: np.ndarray, lam: float, mode: str) -> np.ndarray:
    """Optimistic ``lam w / (w^2 + lam)`` or pessimistic ``min(lam, w)`` weights."""
    if mode == "pessimistic":
        return np.minimum(lam, w)
    if mode != "optimistic":
        raise InvalidInputError("mode must be 'optimistic' or 'pessimistic'")
    if lam == 0.0:
        return np.zeros_like(w)
    if math.isinf(lam):
        return w.copy()
    return lam * w / (w * w + lam)


def harmonic_weights(w: np.ndarray, lam: float) -> np.ndarray:
    denom = (1.0 - lam) + lam * w
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0.0, w / np.where(denom > 0.0, denom, 1.0), 0.0)
    return out


def _cab(M, r, w, pi, pi0, pred):
    with np.errstate(divide="ignore", invalid="ignore"):
        w_all = pi / pi0
        ratio = np.where(w_all > 0.0, M / np.where(w_all > 0.0, w_all, 1.0), np.inf)
    blend = np.minimum(ratio, 1.0)
    alpha = 1.0 - blend
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(w > 0.0, np.minimum(M / np.where(w > 0.0, w, 1.0), 1.0), 1.0)
    return np.einsum("ij,ij->i", pi * alpha, pred) + w * beta * r


def _clusters(pred: np.ndarray, count: int) -> np.ndarray:
    return np.minimum(np.floor(pred * count).astype(np.int64), count - 1)


def _group_ips(count, r, actions, pi, pi0, pred):
    groups = _clusters(pred, count)
    own = groups[_rows(r.shape[0]), actions][:, None]
    same = groups == own
    num = np.where(same, pi, 0.0).sum(axis=1)
    den = np.where(same, pi0, 0.0).sum(axis=1)
    if np.any(den <= 0.0):
        raise NumericalDegeneracyError("logging policy puts zero mass on an observed cluster")
    return num / den * r


def kernel(spec: EstimatorSpec, r: np.ndarray, actions: np.ndarray, w: np.ndarray,
           pi: np.ndarray, pred: Optional[np.ndarray] = None,
           pi0: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-sample contributions of ``spec`` from precomputed arrays.

    ``w`` are the logged-action propensity weights, ``pi``/``pi0`` the
    (n, m) target/logging distributions and ``pred`` the (n, m) reward
    model predictions.
    """
    k, h = spec.kind, spec.hyper
    if k in NEEDS_MODEL and pred is None:
        raise InvalidInputError(f"{k} needs reward-model predictions")
    if k in NEEDS_LOGGING and pi0 is None:
        raise InvalidInputError(f"{k} needs the full logging policy")
    if k is Kind.IPS:
        return w * r
    if k is Kind.TRUNCATED_IPS:
        return np.minimum(h, w) * r
    if k is Kind.IPS_LAMBDA:
        return harmonic_weights(w, h) * r
    if k is Kind.DM:
        return _dm(pi, pred)
    if k is Kind.DR:
        return w * _residual(r, actions, pred) + _dm(pi, pred)
    if k is Kind.SWITCH_DR:
        keep = np.where(w <= h, w, 0.0)
        return keep * _residual(r, actions, pred) + _dm(pi, pred)
    if k is Kind.DROS or k is Kind.DRPS:
        mode = "optimistic" if k is Kind.DROS else "pessimistic"
        return shrink_weights(w, h, mode) * _residual(r, actions, pred) + _dm(pi, pred)
    if k is Kind.CAB:
        return _cab(h, r, w, pi, pi0, pred)
    if k is Kind.GROUP_IPS:
        return _group_ips(h, r, actions, pi, pi0, pred)
    raise InvalidInputError(f"unhandled estimator kind {k}")


def _run(spec: EstimatorSpec, dataset: LoggedDataset, target: PolicyLike,
         model: Optional[RewardModel] = None,
         logging: Optional[PolicyLike] = None) -> PerSampleValues:
    pi = _as_probs(target, dataset, "target")
    w = propensity_weights(dataset, pi)
    pred = _model_predictions(dataset, model) if spec.kind in NEEDS_MODEL else None
    pi0 = _as_probs(logging, dataset, "logging") if logging is not None else None
    return PerSampleValues(kernel(spec, dataset.rewards, dataset.actions, w, pi, pred, pi0))


# ---------------------------------------------------------------------------
# public per-estimator entry points

def ips_contributions(dataset: LoggedDataset, target: PolicyLike) -> PerSampleValues:
    """v_i = w_i r_i."""
    return _run(EstimatorSpec(Kind.IPS), dataset, target)


def dm_contributions(dataset: LoggedDataset, target: PolicyLike,
                     model: Optional[RewardModel] = None) -> PerSampleValues:
    """v_i = sum_a pi(a|x_i) f(x_i, a).  Fits a ridge model on ``dataset`` if none is given."""
    return _run(EstimatorSpec(Kind.DM), dataset, target, model)


def dr_contributions(dataset: LoggedDataset, target: PolicyLike,
                     model: Optional[RewardModel] = None) -> PerSampleValues:
    return _run(EstimatorSpec(Kind.DR), dataset, target, model)


def truncated_ips_contributions(dataset: LoggedDataset, target: PolicyLike,
                                M: float) -> PerSampleValues:
    return _run(EstimatorSpec(Kind.TRUNCATED_IPS, M), dataset, target)


def switch_dr_contributions(dataset: LoggedDataset, target: PolicyLike,
                            model: Optional[RewardModel], tau: float) -> PerSampleValues:
    """DR residual correction kept only where ``w_i <= tau``."""
    return _run(EstimatorSpec(Kind.SWITCH_DR, tau), dataset, target, model)


def cab_contributions(dataset: LoggedDataset, target: PolicyLike,
                      model: Optional[RewardModel], M: float,
                      logging: PolicyLike) -> PerSampleValues:
    """Continuous adaptive blending of DM and IPS.

    The blend for action ``a`` depends on ``w(x_i, a)`` for every action, so
    the full logging policy is required.  Actions the target never takes
    contribute nothing.
    """
    return _run(EstimatorSpec(Kind.CAB, M), dataset, target, model, logging)


def dr_shrink_contributions(dataset: LoggedDataset, target: PolicyLike,
                            model: Optional[RewardModel], lam: float,
                            mode: str = "optimistic") -> PerSampleValues:
    kind = {"optimistic": Kind.DROS, "pessimistic": Kind.DRPS}.get(mode)
    if kind is None:
        raise InvalidInputError("mode must be 'optimistic' or 'pessimistic'")
    return _run(EstimatorSpec(kind, lam), dataset, target, model)


def ips_lambda_contributions(dataset: LoggedDataset, target: PolicyLike,
                             lam: float) -> PerSampleValues:
    """Harmonic weight correction ``w / (1 - lam + lam w)``."""
    return _run(EstimatorSpec(Kind.IPS_LAMBDA, lam), dataset, target)


@dataclass(frozen=True, eq=False)
class ClusterMap:
    """Uniform binning of predicted reward in [0, 1] into ``cluster_count`` groups."""

    model: RewardModel
    cluster_count: int

    def assign(self, contexts: np.ndarray) -> np.ndarray:
        """Cluster index for every (context, action) pair, shape (n, m)."""
        return _clusters(self.model.predict_all(contexts), self.cluster_count)

    def cluster(self, context: np.ndarray, action: int) -> int:
        x = np.asarray(context, dtype=float).reshape(1, -1)
        return int(self.assign(x)[0, int(action)])


def build_cluster_map(model: RewardModel, cluster_count: int) -> ClusterMap:
    if int(cluster_count) != cluster_count or cluster_count < 1:
        raise InvalidInputError("cluster_count must be an integer >= 1")
    return ClusterMap(model, int(cluster_count))


def cluster_marginals(groups: np.ndarray, probs: np.ndarray, count: int) -> np.ndarray:
    """pi(g|x) for every row and cluster, shape (n, count)."""
    out = np.zeros((probs.shape[0], count))
    rows = np.repeat(np.arange(probs.shape[0]), probs.shape[1])
    np.add.at(out, (rows, groups.reshape(-1)), probs.reshape(-1))
    return out


def group_ips_contributions(dataset: LoggedDataset, target: PolicyLike,
                            logging: PolicyLike, cluster_map: ClusterMap) -> PerSampleValues:
    """IPS on cluster marginals: ``pi(g_i|x_i) / pi0(g_i|x_i) * r_i``."""
    spec = EstimatorSpec(Kind.GROUP_IPS, cluster_map.cluster_count)
    pi = _as_probs(target, dataset, "target")
    pi0 = _as_probs(logging, dataset, "logging")
    pred = cluster_map.model.predict_all(dataset.contexts)
    w = propensity_weights(dataset, pi)
    return PerSampleValues(kernel(spec, dataset.rewards, dataset.actions, w, pi, pred, pi0))


class Estimate(NamedTuple):
    estimate: float
    variance_of_mean: float
    contributions: PerSampleValues


def contributions(spec: EstimatorSpec, dataset: LoggedDataset, target: PolicyLike,
                  logging: Optional[PolicyLike] = None,
                  model: Optional[RewardModel] = None) -> PerSampleValues:
    """Contributions of any spec; a ridge model is fitted on ``dataset`` when needed."""
    if spec.kind in NEEDS_LOGGING and logging is None:
        raise InvalidInputError(f"{spec.kind} needs the full logging policy")
    return _run(spec, dataset, target, model, logging)


def estimate(spec: EstimatorSpec, dataset: LoggedDataset, target: PolicyLike,
             logging: Optional[PolicyLike] = None,
             model: Optional[RewardModel] = None) -> Estimate:
    values = contributions(spec, dataset, target, logging, model)
    est, var = mean_and_variance(values)
    return Estimate(est, var, values)
