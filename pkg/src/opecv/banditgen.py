"""Turn multi-class classification data into contextual-bandit problems.

A run splits the examples in half.  One half learns two independent
bootstrap logistic models that define the logging and target softmax
policies; the other half is used to compute the target's true value and to
log bandit feedback (reward 1 when the action equals the label).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import InvalidInputError, LoggedDataset, SoftmaxLinearPolicy

LOGISTIC_ITERATIONS = 500
LOGISTIC_STEP = 0.1
LOGISTIC_L2 = 1e-6


@dataclass(frozen=True, eq=False)
class ClassificationDataset:
    features: np.ndarray
    labels: np.ndarray
    m: int
    label_names: tuple = ()
    name: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels).astype(np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise InvalidInputError("features must be (n, d) and labels (n,)")
        if y.size and (y.min() < 0 or y.max() >= self.m):
            raise InvalidInputError(f"labels must lie in [0, {self.m})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "m", int(self.m))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "ClassificationDataset":
        return ClassificationDataset(self.features[idx], self.labels[idx], self.m,
                                     self.label_names, self.name)

    def to_dict(self) -> dict:
        return {"name": self.name, "n": self.n, "d": self.d, "m": self.m,
                "label_names": list(self.label_names),
                "features": self.features.tolist(), "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "ClassificationDataset":
        try:
            x = np.asarray(obj["features"], dtype=float).reshape(int(obj["n"]), int(obj["d"]))
            return cls(x, np.asarray(obj["labels"]), int(obj["m"]),
                       tuple(obj.get("label_names", ())), obj.get("name", ""))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed dataset document: {exc}") from exc


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def minmax_scale(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (x - lo) / span


def load_classification_csv(path: str | Path, label_column: int = -1,
                            scale: bool = False) -> ClassificationDataset:
    """Read numeric features and one label column from a CSV file.

    A header row is detected when any of its feature fields is non-numeric.
    Labels are re-indexed densely in order of first appearance.  ``scale``
    applies per-feature min-max scaling.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    width = len(rows[0])
    if width < 2:
        raise InvalidInputError(f"{path}: need at least one feature and a label column")
    lc = label_column % width
    first_feats = [c for j, c in enumerate(rows[0]) if j != lc]
    if not all(_is_number(c) for c in first_feats):
        rows = rows[1:]
    feats, raw_labels = [], []
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise InvalidInputError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
        vals = []
        for j, cell in enumerate(row):
            if j == lc:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise InvalidInputError(
                    f"{path}: row {lineno}, column {j}: non-numeric feature {cell!r}") from None
        feats.append(vals)
        raw_labels.append(row[lc].strip())
    if not feats:
        raise InvalidInputError(f"{path}: no data rows")
    names: dict = {}
    labels = [names.setdefault(lab, len(names)) for lab in raw_labels]
    if len(names) < 2:
        raise InvalidInputError(f"{path}: need at least two classes, found {len(names)}")
    x = np.asarray(feats, dtype=float)
    if scale:
        x = minmax_scale(x)
    return ClassificationDataset(x, np.asarray(labels), len(names), tuple(names), path.stem)


def load_dataset(path: str | Path, label_column: int = -1, scale: bool = False) -> ClassificationDataset:
    """Load a CSV or a JSON document written by ``opecv convert``."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON: {exc}") from exc
        ds = ClassificationDataset.from_dict(obj)
        if scale:
            ds = ClassificationDataset(minmax_scale(ds.features), ds.labels, ds.m,
                                       ds.label_names, ds.name)
        return ds
    return load_classification_csv(path, label_column, scale)


def load_manifest(path: str | Path) -> dict:
    """Map dataset names to ``(path, label_column)`` from a JSON manifest.

    Entries are either a path string or ``{"path": ..., "label_column": int}``;
    relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    obj = json.loads(path.read_text(encoding="utf-8"))
    out = {}
    for name, entry in obj.items():
        if isinstance(entry, str):
            entry = {"path": entry}
        p = Path(entry["path"])
        if not p.is_absolute():
            p = path.parent / p
        out[name] = (p, int(entry.get("label_column", -1)))
    return out


def split_halves(H: ClassificationDataset, rng: np.random.Generator):
    """Random disjoint halves; the bandit half gets ``ceil(n / 2)`` examples."""
    perm = rng.permutation(H.n)
    nb = math.ceil(H.n / 2)
    return H.subset(np.sort(perm[:nb])), H.subset(np.sort(perm[nb:]))


def _logistic_objective(z: np.ndarray, y: np.ndarray, theta: np.ndarray, l2: float) -> np.ndarray:
    # per class: mean(log(1 + e^z) - y z) + l2/2 ||theta||^2
    return (np.logaddexp(0.0, z) - y * z).mean(axis=0) + 0.5 * l2 * (theta * theta).sum(axis=0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_one_vs_rest(x: np.ndarray, labels: np.ndarray, m: int,
                    iterations: int = LOGISTIC_ITERATIONS, step: float = LOGISTIC_STEP,
                    l2: float = LOGISTIC_L2) -> np.ndarray:
    """One-vs-rest logistic regression without intercept by gradient descent.

    All classes are optimised together.  A step that increases a class's
    objective is rejected and that class's step size is halved.  Classes
    with no positive example keep a zero weight vector.  Returns (m, d).
    """
    n, d = x.shape
    y = (labels[:, None] == np.arange(m)[None, :]).astype(float)
    present = y.any(axis=0)
    theta = np.zeros((d, m))
    steps = np.full(m, float(step))
    z = x @ theta
    obj = _logistic_objective(z, y, theta, l2)
    for _ in range(iterations):
        grad = x.T @ (_sigmoid(z) - y) / n + l2 * theta
        cand = theta - steps * grad
        z_new = x @ cand
        obj_new = _logistic_objective(z_new, y, cand, l2)
        ok = (obj_new <= obj) & present
        theta[:, ok] = cand[:, ok]
        z[:, ok] = z_new[:, ok]
        obj[ok] = obj_new[ok]
        steps[~ok] *= 0.5
    theta[:, ~present] = 0.0
    return theta.T.copy()


def fit_logistic_models(H_pi: ClassificationDataset, rng: np.random.Generator, **kw) -> np.ndarray:
    """Fit per-class logistic models on a bootstrap resample of ``H_pi``."""
    if H_pi.n < 1:
        raise InvalidInputError("empty policy-learning set")
    idx = rng.integers(0, H_pi.n, size=H_pi.n)
    return fit_one_vs_rest(H_pi.features[idx], H_pi.labels[idx], H_pi.m, **kw)


def make_policies(theta0: np.ndarray, theta1: np.ndarray, beta0: float, beta1: float):
    """(logging, target) softmax policies with the given inverse temperatures."""
    return SoftmaxLinearPolicy(theta0, beta0), SoftmaxLinearPolicy(theta1, beta1)


def true_value(policy: SoftmaxLinearPolicy, H_b: ClassificationDataset) -> float:
    """Average probability the policy puts on the correct label."""
    p = policy.probs(H_b.features)
    return float(p[np.arange(H_b.n), H_b.labels].mean())


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling of one action per row."""
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random(probs.shape[0])
    return np.minimum((cdf <= u[:, None]).sum(axis=1), probs.shape[1] - 1)


def generate_logged(H_b: ClassificationDataset, logging: SoftmaxLinearPolicy,
                    rng: np.random.Generator) -> LoggedDataset:
    probs = logging.probs(H_b.features)
    a = sample_actions(probs, rng)
    prop = probs[np.arange(H_b.n), a]
    r = (a == H_b.labels).astype(float)
    return LoggedDataset(H_b.features, a, r, prop, H_b.m)


@dataclass(frozen=True, eq=False)
class BanditProblem:
    bandit_half: ClassificationDataset
    policy_half: ClassificationDataset
    logging: SoftmaxLinearPolicy
    target: SoftmaxLinearPolicy
    true_value: float
    logged: LoggedDataset


def build_problem(dataset: ClassificationDataset, beta0: float, beta1: float,
                  rng: np.random.Generator, subsample: Optional[int] = None) -> BanditProblem:
    """Split, fit two bootstrap policies, compute the true value and log data.

    ``subsample`` draws that many bandit-half examples without replacement
    before logging (sample-size sweeps).
    """
    if dataset.n < 2 * dataset.m:
        raise InvalidInputError(f"need at least 2m = {2 * dataset.m} examples, have {dataset.n}")
    H_b, H_pi = split_halves(dataset, rng)
    theta0 = fit_logistic_models(H_pi, rng)
    theta1 = fit_logistic_models(H_pi, rng)
    logging, target = make_policies(theta0, theta1, beta0, beta1)
    if subsample is not None:
        if not 1 <= subsample <= H_b.n:
            raise InvalidInputError(f"subsample size {subsample} outside [1, {H_b.n}]")
        H_b = H_b.subset(np.sort(rng.choice(H_b.n, size=subsample, replace=False)))
    value = true_value(target, H_b)
    logged = generate_logged(H_b, logging, rng)
    return BanditProblem(H_b, H_pi, logging, target, value, logged)


def synthetic_classification(n: int, d: int, m: int, rng: np.random.Generator,
                             separation: float = 2.0, name: str = "synthetic") -> ClassificationDataset:
    """Gaussian classes around random centroids, features min-max scaled."""
    centroids = rng.normal(scale=separation, size=(m, d))
    y = rng.integers(0, m, size=n)
    x = centroids[y] + rng.normal(size=(n, d))
    return ClassificationDataset(minmax_scale(x), y, m, tuple(str(i) for i in range(m)), name)


@dataclass(frozen=True, eq=False)
class FiniteContextBandit:
    """Bandit over a finite context set with uniform context distribution.

    Rewards are Bernoulli with mean ``mean_reward[x, a]``, so the value of
    any policy is an exact finite sum.
    """

    contexts: np.ndarray
    mean_reward: np.ndarray

    @property
    def m(self) -> int:
        return self.mean_reward.shape[1]

    def value(self, policy: SoftmaxLinearPolicy) -> float:
        p = policy.probs(self.contexts)
        return float((p * self.mean_reward).sum(axis=1).mean())

    def sample(self, n: int, logging: SoftmaxLinearPolicy, rng: np.random.Generator) -> LoggedDataset:
        idx = rng.integers(0, self.contexts.shape[0], size=n)
        x = self.contexts[idx]
        probs = logging.probs(x)
        a = sample_actions(probs, rng)
        r = (rng.random(n) < self.mean_reward[idx, a]).astype(float)
        return LoggedDataset(x, a, r, probs[np.arange(n), a], self.m)


def linear_finite_bandit(contexts: Sequence[Sequence[float]], coef: np.ndarray,
                         intercept: np.ndarray) -> FiniteContextBandit:
    """Bandit whose mean rewards are affine in the context for every action."""
    x = np.asarray(contexts, dtype=float)
    mean = x @ np.asarray(coef, dtype=float).T + np.asarray(intercept, dtype=float)
    if mean.min() < 0.0 or mean.max() > 1.0:
        raise InvalidInputError("mean rewards must lie in [0, 1]")
    return FiniteContextBandit(x, mean)
