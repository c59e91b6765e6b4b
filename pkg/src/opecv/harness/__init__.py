"""Benchmark harness: configs, per-run orchestration, metrics and CSV output."""

from .config import BUNDLES, Bundle, ExperimentConfig, load_named_dataset, make_bundle
from .metrics import aggregate, bootstrap_ci
from .runner import ResultRow, bench, regret_sweep, run_condition, run_experiment, write_regret

__all__ = [
    "BUNDLES", "Bundle", "ExperimentConfig", "load_named_dataset", "make_bundle",
    "aggregate", "bootstrap_ci",
    "ResultRow", "bench", "regret_sweep", "run_condition", "run_experiment", "write_regret",
]
