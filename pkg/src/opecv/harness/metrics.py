"""Metrics over result rows: MSE, regret and percentile-bootstrap intervals."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np

from ..core import InvalidInputError, SeedLike, make_rng


def bootstrap_ci(values: Sequence[float], level: float = 0.95, resamples: int = 10_000,
                 rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``values``."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise InvalidInputError("no values")
    if not 0.0 < level < 1.0:
        raise InvalidInputError("level must lie in (0, 1)")
    if resamples < 1:
        raise InvalidInputError("resamples must be positive")
    if np.all(v == v[0]):
        return float(v[0]), float(v[0])
    rng = rng if rng is not None else np.random.default_rng(0)
    n = v.size
    means = np.empty(resamples)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, resamples, chunk):
        stop = min(resamples, start + chunk)
        idx = rng.integers(0, n, size=(stop - start, n))
        means[start:stop] = v[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def aggregate(rows: Iterable, seed: SeedLike = 0, level: float = 0.95,
              resamples: int = 10_000, by=("dataset", "method"),
              include_overall: bool = False) -> list[dict]:
    """MSE and mean regret with bootstrap intervals per group of rows.

    ``rows`` are :class:`ResultRow`-like objects.  With ``include_overall``
    an extra group with dataset ``"*"`` pools every dataset per method.
    """
    groups: dict = defaultdict(list)
    for r in rows:
        key = tuple(getattr(r, k) for k in by)
        groups[key].append(r)
        if include_overall and by[0] == "dataset":
            groups[("*",) + key[1:]].append(r)
    out = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        members = groups[key]
        se = [r.squared_error for r in members]
        rg = [r.regret for r in members]
        label = "|".join(str(k) for k in key)
        mse_lo, mse_hi = bootstrap_ci(se, level, resamples, make_rng(seed, label, "mse"))
        rg_lo, rg_hi = bootstrap_ci(rg, level, resamples, make_rng(seed, label, "regret"))
        row = dict(zip(by, key))
        row.update(count=len(members), mse=float(np.mean(se)), mse_lo=mse_lo, mse_hi=mse_hi,
                   regret=float(np.mean(rg)), regret_lo=rg_lo, regret_hi=rg_hi)
        out.append(row)
    return out
