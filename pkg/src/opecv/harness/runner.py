"""Experiment orchestration: conditions x runs, result rows and output files."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..banditgen import BanditProblem, ClassificationDataset, build_problem
from ..core import InvalidInputError, derive_seed, make_rng
from ..estimators import EstimatorSpec, Kind
from ..reward_model import fit_ridge
from ..selection import Evaluator, ocv_select, slope_select
from ..tuning import (
    default_grid,
    theory_truncation,
    tune_dr_shrink,
    tune_ips_lambda,
    tune_switch_dr,
)
from .config import ExperimentConfig, bundle_for_kind, load_named_dataset, make_bundle
from .metrics import aggregate, bootstrap_ci

log = logging.getLogger(__name__)

VALIDATORS = {"ocv-ips": Kind.IPS, "ocv-dr": Kind.DR, "ocv-dm": Kind.DM}


@dataclass
class ResultRow:
    dataset: str
    beta0: float
    beta1: float
    run: int
    method: str
    chosen: str
    estimate: float
    true_value: float
    squared_error: float
    regret: float
    seconds: float

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Iterable, header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        vals = [getattr(r, h) for h in header] if not isinstance(r, dict) else [r[h] for h in header]
        w.writerow([_fmt(v) for v in vals])
    return buf.getvalue()


def condition_seed(config: ExperimentConfig, dataset: str, beta0: float, beta1: float,
                   run: int, stream: str):
    return derive_seed(config.seed, dataset, repr(float(beta0)), repr(float(beta1)), run, stream)


def _theory_spec(kind: Kind, problem: BanditProblem, ev: Evaluator, config: ExperimentConfig):
    D = problem.logged
    if kind is Kind.TRUNCATED_IPS:
        return EstimatorSpec(kind, theory_truncation(D.n))
    if kind is Kind.IPS_LAMBDA:
        return EstimatorSpec(kind, tune_ips_lambda(D, ev.pi, config.ips_lambda_delta))
    grid = default_grid(kind, D, ev.pi)
    if kind is Kind.GROUP_IPS:
        order = [EstimatorSpec(kind, v) for v in grid.by_decreasing_variance()]
        return slope_select(order, D, ev.pi, ev.pi0, evaluator=ev).chosen
    model = fit_ridge(D, config.regularization)
    if kind is Kind.SWITCH_DR:
        return EstimatorSpec(kind, tune_switch_dr(D, ev.pi, model, grid, logging=ev.pi0))
    mode = "optimistic" if kind is Kind.DROS else "pessimistic"
    return EstimatorSpec(kind, tune_dr_shrink(D, ev.pi, model, grid, mode))


def run_condition(config: ExperimentConfig, dataset: ClassificationDataset, beta0: float,
                  beta1: float, run_index: int, subsample: Optional[int] = None) -> list[ResultRow]:
    """Build one bandit problem and evaluate every configured method on it."""
    name = dataset.name
    rng = make_rng(condition_seed(config, name, beta0, beta1, run_index, "problem"))
    problem = build_problem(dataset, beta0, beta1, rng, subsample)
    D, V = problem.logged, problem.true_value
    ev = Evaluator(D, problem.target, problem.logging, config.regularization)
    split_seed = condition_seed(config, name, beta0, beta1, run_index, "splits")
    full: dict = {}

    def sq_err(spec: EstimatorSpec) -> tuple[float, float]:
        if spec not in full:
            est = ev.estimate(spec)[0]
            full[spec] = (est, (est - V) ** 2)
        return full[spec]

    rows: list[ResultRow] = []
    seen: set = set()

    def emit(method, spec, est, err, best, seconds):
        if method in seen:
            return
        seen.add(method)
        regret = err - min(best, err)
        rows.append(ResultRow(name, float(beta0), float(beta1), run_index, method, spec.label,
                              float(est), float(V), float(err), float(regret),
                              float(seconds) if config.record_time else 0.0))

    bundles = {}
    for bname in config.bundles:
        try:
            bundles[bname] = make_bundle(bname, D, ev.pi)
        except Exception as exc:  # noqa: BLE001
            log.error("%s run %d: bundle %s failed: %s", name, run_index, bname, exc)

    for bname, bundle in bundles.items():
        best = min(sq_err(s)[1] for s in bundle.candidates)
        for method in config.methods:
            t0 = time.perf_counter()
            try:
                if method == "fixed":
                    for spec in bundle.candidates:
                        t1 = time.perf_counter()
                        est, err = sq_err(spec)
                        emit(f"fixed/{spec.label}", spec, est, err, best, time.perf_counter() - t1)
                    continue
                if method == "slope":
                    if bundle.slope_order is None:
                        continue
                    res = slope_select(bundle.slope_order, D, ev.pi, ev.pi0, evaluator=ev)
                else:
                    vkind = VALIDATORS.get(method) or Kind(config.validator.upper())
                    res = ocv_select(ev.pi, D, bundle.candidates, EstimatorSpec(vkind), config.K,
                                     split_seed, ev.pi0, train_fraction=config.train_fraction,
                                     one_se=config.one_se,
                                     allow_biased_validator=vkind is Kind.DM, evaluator=ev)
                est, err = sq_err(res.chosen)
                emit(f"{method}/{bname}", res.chosen, est, err, best, time.perf_counter() - t0)
            except Exception as exc:  # noqa: BLE001
                log.error("%s run %d: method %s/%s failed: %s", name, run_index, method, bname, exc)

    for kname in config.theory:
        kind = Kind(kname)
        t0 = time.perf_counter()
        try:
            spec = _theory_spec(kind, problem, ev, config)
            bname = bundle_for_kind(kind)
            ref = bundles.get(bname) or make_bundle(bname, D, ev.pi)
            best = min(sq_err(s)[1] for s in ref.candidates)
            est, err = sq_err(spec)
            emit(f"theory/{kind.value}", spec, est, err, best, time.perf_counter() - t0)
        except Exception as exc:  # noqa: BLE001
            log.error("%s run %d: theory tuner %s failed: %s", name, run_index, kname, exc)
    return rows


def _task(args):
    config, dataset, b0, b1, run, subsample = args
    return run_condition(config, dataset, b0, b1, run, subsample)


def worker_count(config: ExperimentConfig) -> int:
    env = os.environ.get("OPECV_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidInputError(f"OPECV_THREADS must be an integer, got {env!r}") from None
    if config.workers:
        return max(1, int(config.workers))
    return os.cpu_count() or 1


def _sort_key(row: ResultRow):
    return (row.dataset, row.beta0, row.beta1, row.run, row.method)


def load_datasets(config: ExperimentConfig) -> tuple[list[ClassificationDataset], list[str]]:
    """Load every configured dataset; failures are logged and reported back."""
    out, failed = [], []
    for entry in config.datasets:
        try:
            out.append(load_named_dataset(entry, config.manifest, config.scale_features))
        except Exception as exc:  # noqa: BLE001
            log.error("dataset %s failed to load: %s", entry, exc)
            failed.append(f"{entry}: {exc}")
    return out, failed


def run_tasks(config: ExperimentConfig, tasks: list) -> list[ResultRow]:
    workers = min(worker_count(config), max(1, len(tasks)))
    rows: list[ResultRow] = []
    if workers <= 1:
        for t in tasks:
            rows.extend(_task(t))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))):
                rows.extend(chunk)
    return rows


def run_experiment(config: ExperimentConfig,
                   datasets: Optional[list[ClassificationDataset]] = None) -> list[ResultRow]:
    if datasets is None:
        datasets, _ = load_datasets(config)
    tasks = [(config, ds, b0, b1, run, None)
             for ds in datasets for b0 in config.beta0 for b1 in config.beta1
             for run in range(config.runs)]
    return sorted(run_tasks(config, tasks), key=_sort_key)


SUMMARY_HEADER = ["dataset", "method", "count", "mse", "mse_lo", "mse_hi",
                  "regret", "regret_lo", "regret_hi"]


def bench(config: ExperimentConfig, out_dir: str | Path) -> dict:
    """Run the full grid and write results.csv, summary.csv and plotdata/."""
    out = Path(out_dir)
    datasets, failed = load_datasets(config)
    rows = run_experiment(config, datasets)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(rows_to_csv(rows, ResultRow.header()), encoding="utf-8")
    summary = aggregate(rows, seed=config.seed, resamples=config.bootstrap_resamples,
                        include_overall=len(datasets) > 1)
    (out / "summary.csv").write_text(rows_to_csv(summary, SUMMARY_HEADER), encoding="utf-8")
    _write_plotdata(out / "plotdata", rows, summary, config)
    return {"rows": len(rows), "failed_datasets": failed, "out": str(out)}


def _write_plotdata(path: Path, rows: list[ResultRow], summary: list[dict],
                    config: ExperimentConfig) -> None:
    path.mkdir(parents=True, exist_ok=True)
    (path / "mse.csv").write_text(
        rows_to_csv(summary, ["dataset", "method", "mse", "mse_lo", "mse_hi"]), encoding="utf-8")
    per_cond = aggregate(rows, seed=config.seed, resamples=config.bootstrap_resamples,
                         by=("dataset", "beta0", "beta1", "method"))
    (path / "condition_mse.csv").write_text(
        rows_to_csv(per_cond, ["dataset", "beta0", "beta1", "method", "count", "mse", "mse_lo",
                               "mse_hi"]), encoding="utf-8")
    counts = Counter((r.dataset, r.method, r.chosen) for r in rows
                     if not r.method.startswith("fixed/"))
    choice_rows = [{"dataset": d, "method": m, "chosen": c, "count": n}
                   for (d, m, c), n in sorted(counts.items())]
    (path / "choices.csv").write_text(
        rows_to_csv(choice_rows, ["dataset", "method", "chosen", "count"]), encoding="utf-8")


REGRET_HEADER = ["dataset", "beta0", "beta1", "size", "run", "method", "chosen", "estimate",
                 "true_value", "squared_error", "regret"]
REGRET_SUMMARY_HEADER = ["dataset", "method", "size", "count", "median_regret", "mean_regret",
                         "regret_lo", "regret_hi"]


def regret_sweep(config: ExperimentConfig, sizes: Sequence[int],
                 datasets: Optional[list[ClassificationDataset]] = None) -> list[dict]:
    """Selection regret versus logged-data size (bandit half subsampled)."""
    if not sizes:
        raise InvalidInputError("need at least one size")
    if datasets is None:
        datasets, _ = load_datasets(config)
    tasks = [(config, ds, b0, b1, run, int(size))
             for ds in datasets for size in sizes for b0 in config.beta0
             for b1 in config.beta1 for run in range(config.runs)]
    out = []
    for t, rows in zip(tasks, _map_tasks(config, tasks)):
        for r in rows:
            d = {h: getattr(r, h) for h in ResultRow.header() if h != "seconds"}
            d["size"] = t[5]
            out.append(d)
    out.sort(key=lambda d: (d["dataset"], d["beta0"], d["beta1"], d["size"], d["run"], d["method"]))
    return out


def _map_tasks(config, tasks):
    workers = min(worker_count(config), max(1, len(tasks)))
    if workers <= 1:
        return [_safe_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_safe_task, tasks))


def _safe_task(t):
    try:
        return _task(t)
    except Exception as exc:  # noqa: BLE001
        log.error("%s size %s run %s failed: %s", t[1].name, t[5], t[4], exc)
        return []


def summarize_regret(rows: list[dict], seed: int = 0, resamples: int = 10_000) -> list[dict]:
    groups: dict = {}
    for r in rows:
        if r["method"].startswith("fixed/"):
            continue
        groups.setdefault((r["dataset"], r["method"], r["size"]), []).append(r["regret"])
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2])):
        vals = groups[key]
        lo, hi = bootstrap_ci(vals, 0.95, resamples, make_rng(seed, "|".join(map(str, key))))
        out.append({"dataset": key[0], "method": key[1], "size": key[2], "count": len(vals),
                    "median_regret": float(np.median(vals)), "mean_regret": float(np.mean(vals)),
                    "regret_lo": lo, "regret_hi": hi})
    return out


def write_regret(config: ExperimentConfig, sizes: Sequence[int], out_dir: str | Path) -> dict:
    out = Path(out_dir)
    datasets, failed = load_datasets(config)
    rows = regret_sweep(config, sizes, datasets)
    out.mkdir(parents=True, exist_ok=True)
    (out / "regret.csv").write_text(rows_to_csv(rows, REGRET_HEADER), encoding="utf-8")
    summary = summarize_regret(rows, config.seed, config.bootstrap_resamples)
    (out / "regret_summary.csv").write_text(rows_to_csv(summary, REGRET_SUMMARY_HEADER),
                                            encoding="utf-8")
    (out / "plotdata").mkdir(exist_ok=True)
    (out / "plotdata" / "regret_by_size.csv").write_text(
        rows_to_csv(summary, REGRET_SUMMARY_HEADER), encoding="utf-8")
    return {"rows": len(rows), "failed_datasets": failed, "out": str(out)}
