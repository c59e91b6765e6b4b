"""Shared domain types: logged data, softmax policies, splits and variance."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class NumericalDegeneracyError(ArithmeticError):
    """Raised when a quantity that must be positive collapses to zero."""


SeedLike = Union[int, np.random.SeedSequence]


def derive_seed(master: SeedLike, *keys: int | str) -> np.random.SeedSequence:
    """Child seed for ``(master, *keys)``; independent of call order.

    String keys are hashed with CRC32 so dataset names can take part in the key.
    """
    spawn = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys)
    if isinstance(master, np.random.SeedSequence):
        return np.random.SeedSequence(master.entropy, spawn_key=master.spawn_key + spawn)
    return np.random.SeedSequence(int(master), spawn_key=spawn)


def make_rng(master: SeedLike, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class LoggedSample:
    context: np.ndarray
    action: int
    reward: float
    logging_propensity: float


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    """Logged bandit feedback stored column-wise.

    Parameters
    ----------
    contexts : array of shape (n, d)
    actions : int array of shape (n,), values in ``[0, m)``
    rewards : array of shape (n,), values in ``[0, 1]``
    logging_propensities : array of shape (n,)
        The logging probability of the taken action, recorded at logging time.
    m : int
        Number of actions.
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    logging_propensities: np.ndarray
    m: int

    def __post_init__(self):
        x = np.asarray(self.contexts, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        a = np.asarray(self.actions)
        r = np.asarray(self.rewards, dtype=float)
        p = np.asarray(self.logging_propensities, dtype=float)
        if x.ndim != 2:
            raise InvalidInputError("contexts must be a 2-d array")
        n = x.shape[0]
        if a.shape != (n,) or r.shape != (n,) or p.shape != (n,):
            raise InvalidInputError("actions, rewards and propensities must have length n")
        if a.size and not np.issubdtype(a.dtype, np.integer):
            if not np.all(a == np.round(a)):
                raise InvalidInputError("actions must be integers")
        a = a.astype(np.int64)
        m = int(self.m)
        if m < 1:
            raise InvalidInputError("m must be positive")
        if n and (a.min() < 0 or a.max() >= m):
            raise InvalidInputError(f"actions must lie in [0, {m})")
        if n and (r.min() < 0.0 or r.max() > 1.0):
            raise InvalidInputError("rewards must lie in [0, 1]")
        if n and (not np.all(p > 0.0) or p.max() > 1.0):
            raise InvalidInputError("logging propensities must lie in (0, 1]")
        for name, arr in (("contexts", x), ("actions", a), ("rewards", r),
                          ("logging_propensities", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "m", m)

    @property
    def n(self) -> int:
        return self.contexts.shape[0]

    @property
    def d(self) -> int:
        return self.contexts.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def samples(self) -> list[LoggedSample]:
        return [
            LoggedSample(self.contexts[i], int(self.actions[i]), float(self.rewards[i]),
                         float(self.logging_propensities[i]))
            for i in range(self.n)
        ]

    @classmethod
    def from_samples(cls, samples: Sequence[LoggedSample], m: int) -> "LoggedDataset":
        if not samples:
            raise InvalidInputError("need at least one sample")
        return cls(
            contexts=np.array([np.asarray(s.context, dtype=float) for s in samples]),
            actions=np.array([s.action for s in samples], dtype=np.int64),
            rewards=np.array([s.reward for s in samples], dtype=float),
            logging_propensities=np.array([s.logging_propensity for s in samples]),
            m=m,
        )

    def subset(self, idx: np.ndarray) -> "LoggedDataset":
        return LoggedDataset(self.contexts[idx], self.actions[idx], self.rewards[idx],
                             self.logging_propensities[idx], self.m)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "m": self.m,
            "contexts": self.contexts.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "logging_propensities": self.logging_propensities.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LoggedDataset":
        try:
            n, d = int(obj["n"]), int(obj["d"])
            contexts = np.asarray(obj["contexts"], dtype=float).reshape(n, d)
            ds = cls(contexts, np.asarray(obj["actions"]), obj["rewards"],
                     obj["logging_propensities"], int(obj["m"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed logged dataset: {exc}") from exc
        return ds

    def to_json(self) -> str:
        # json uses repr() for floats, which is the shortest round-trip form
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LoggedDataset":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LoggedDataset":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class SoftmaxLinearPolicy:
    """pi(a|x) proportional to exp(beta * x . theta_a).

    ``weights`` has one row per action.
    """

    weights: np.ndarray
    inverse_temperature: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] < 1:
            raise InvalidInputError("weights must have shape (m, d)")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "inverse_temperature", float(self.inverse_temperature))

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    def probs(self, contexts: np.ndarray) -> np.ndarray:
        """Action distributions for a batch of contexts, shape (n, m)."""
        x = np.asarray(contexts, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise InvalidInputError(f"contexts must have shape (n, {self.d})")
        if self.inverse_temperature == 0.0:
            return np.full((x.shape[0], self.m), 1.0 / self.m)
        return _softmax_rows(self.inverse_temperature * (x @ self.weights.T))

    def action_probs(self, context: np.ndarray) -> np.ndarray:
        x = np.asarray(context, dtype=float)
        if x.shape != (self.d,):
            raise InvalidInputError(f"context must have length {self.d}, got shape {x.shape}")
        return self.probs(x[None, :])[0]


def action_probs(policy: SoftmaxLinearPolicy, context: np.ndarray) -> np.ndarray:
    return policy.action_probs(context)


def propensity_weight(target: SoftmaxLinearPolicy, sample: LoggedSample) -> float:
    if not sample.logging_propensity > 0.0:
        raise InvalidInputError("logging propensity must be positive")
    return float(target.action_probs(sample.context)[sample.action] / sample.logging_propensity)


def propensity_weights(dataset: LoggedDataset, target_probs: np.ndarray) -> np.ndarray:
    """w_i = pi(a_i|x_i) / pi0(a_i|x_i) given the (n, m) target distribution."""
    return target_probs[np.arange(dataset.n), dataset.actions] / dataset.logging_propensities


@dataclass(frozen=True, eq=False)
class PerSampleValues:
    """Per-sample contributions whose mean is a value estimate."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def estimate(self) -> float:
        return mean_and_variance(self)[0]

    @property
    def variance_of_mean(self) -> float:
        return mean_and_variance(self)[1]


def mean_and_variance(values: PerSampleValues | np.ndarray | Iterable[float]) -> tuple[float, float]:
    """Return the mean of ``values`` and the variance of that mean.

    The variance is ``sum((v - mean)**2) / n**2``, i.e. the plug-in (biased)
    sample variance divided by ``n``.
    """
    v = values.values if isinstance(values, PerSampleValues) else np.asarray(values, dtype=float)
    v = v.reshape(-1)
    n = v.shape[0]
    if n == 0:
        raise InvalidInputError("cannot take the mean of an empty vector")
    mean = float(v.mean())
    dev = v - mean
    return mean, float(dev @ dev) / (n * n)


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: LoggedDataset
    validation: LoggedDataset
    train_index: np.ndarray
    validation_index: np.ndarray


def split_sizes(n: int, train_fraction: float) -> tuple[int, int]:
    """Round-half-up ``train_fraction * n`` and clamp into ``[1, n - 1]``."""
    if n < 2:
        raise InvalidInputError("need at least two samples to split")
    if not 0.0 < train_fraction < 1.0:
        raise InvalidInputError("train_fraction must lie in (0, 1)")
    n_train = min(max(round_half_up(train_fraction * n), 1), n - 1)
    return n_train, n - n_train


def split_indices(n: int, train_fraction: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_train, _ = split_sizes(n, train_fraction)
    perm = rng.permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def mc_split(dataset: LoggedDataset, train_fraction: float,
             rng: np.random.Generator) -> SplitPair:
    """One Monte Carlo cross-validation split (uniform, without replacement)."""
    tr, va = split_indices(dataset.n, train_fraction, rng)
    return SplitPair(dataset.subset(tr), dataset.subset(va), tr, va)
