"""Experiment configuration and candidate bundles."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..banditgen import ClassificationDataset, load_dataset, load_manifest, synthetic_classification
from ..core import InvalidInputError, LoggedDataset, make_rng
from ..estimators import EstimatorSpec, Kind, PolicyLike, parse_kind
from ..tuning import DEFAULT_DELTA, candidates_from_grid, default_grid

BASIC = (EstimatorSpec(Kind.IPS), EstimatorSpec(Kind.DM), EstimatorSpec(Kind.DR))
# SLOPE order for the basic bundle: decreasing variance
BASIC_SLOPE_ORDER = (EstimatorSpec(Kind.IPS), EstimatorSpec(Kind.DR), EstimatorSpec(Kind.DM))

KIND_BUNDLES = {
    "truncated-ips": Kind.TRUNCATED_IPS,
    "switch-dr": Kind.SWITCH_DR,
    "cab": Kind.CAB,
    "dros": Kind.DROS,
    "drps": Kind.DRPS,
    "ips-lambda": Kind.IPS_LAMBDA,
    "group-ips": Kind.GROUP_IPS,
}
BUNDLES = ("ips-dm-dr", *KIND_BUNDLES, "everything")
SELECTORS = ("ocv", "ocv-ips", "ocv-dr", "ocv-dm", "slope")
THEORY_KINDS = (Kind.TRUNCATED_IPS, Kind.SWITCH_DR, Kind.DROS, Kind.DRPS, Kind.IPS_LAMBDA,
                Kind.GROUP_IPS)


def bundle_for_kind(kind: Kind) -> str:
    for name, k in KIND_BUNDLES.items():
        if k is kind:
            return name
    return "ips-dm-dr"


@dataclass
class Bundle:
    name: str
    candidates: list
    # None when no variance ordering is known (SLOPE not applicable)
    slope_order: Optional[list]


def make_bundle(name: str, dataset: LoggedDataset, target: PolicyLike) -> Bundle:
    """Candidates of a named bundle; grids depend on the logged weights."""
    if name == "ips-dm-dr":
        return Bundle(name, list(BASIC), list(BASIC_SLOPE_ORDER))
    if name in KIND_BUNDLES:
        kind = KIND_BUNDLES[name]
        grid = default_grid(kind, dataset, target)
        return Bundle(name, candidates_from_grid(kind, grid),
                      candidates_from_grid(kind, grid.by_decreasing_variance()))
    if name == "everything":
        cands = []
        for kind in KIND_BUNDLES.values():
            cands += candidates_from_grid(kind, default_grid(kind, dataset, target))
        return Bundle(name, cands + list(BASIC), None)
    raise InvalidInputError(f"unknown bundle {name!r}; choose from {', '.join(BUNDLES)}")


@dataclass
class ExperimentConfig:
    """Mirror of the ``bench`` JSON config.

    ``datasets`` entries are CSV/JSON paths, names from ``manifest``, or
    ``synthetic:n=...,d=...,m=...[,seed=...]`` stand-ins.  ``methods`` may
    contain the selectors ``ocv`` (uses ``validator``), ``ocv-ips``,
    ``ocv-dr``, ``ocv-dm`` (biased-validator ablation), ``slope``, and
    ``fixed`` (every bundle candidate as its own method).  ``theory`` lists
    estimator kinds evaluated with their own tuning rule.
    """

    datasets: list
    beta0: list = field(default_factory=lambda: [1.0])
    beta1: list = field(default_factory=lambda: [10.0])
    runs: int = 50
    K: int = 10
    seed: int = 0
    bundles: list = field(default_factory=lambda: ["ips-dm-dr"])
    validator: str = "dr"
    methods: list = field(default_factory=lambda: ["ocv-ips", "ocv-dr", "slope", "fixed"])
    theory: list = field(default_factory=list)
    ips_lambda_delta: float = DEFAULT_DELTA
    out: str = "results"
    manifest: Optional[str] = None
    scale_features: bool = False
    one_se: bool = True
    train_fraction: Optional[float] = None
    regularization: float = 1e-3
    workers: Optional[int] = None
    record_time: bool = False
    bootstrap_resamples: int = 10_000

    def __post_init__(self):
        if not self.datasets:
            raise InvalidInputError("config needs at least one dataset")
        if self.runs < 1:
            raise InvalidInputError("runs must be >= 1")
        if self.K < 2:
            raise InvalidInputError("K must be >= 2")
        for b in self.bundles:
            if b not in BUNDLES:
                raise InvalidInputError(f"unknown bundle {b!r}")
        for mth in self.methods:
            if mth not in SELECTORS and mth != "fixed":
                raise InvalidInputError(f"unknown method {mth!r}")
        if self.validator not in ("ips", "dr", "dm"):
            raise InvalidInputError("validator must be ips, dr or dm")
        self.theory = [parse_kind(k).value for k in self.theory]
        for k in self.theory:
            if Kind(k) not in THEORY_KINDS:
                raise InvalidInputError(f"no theory tuner for {k}")
        self.beta0 = [float(b) for b in self.beta0]
        self.beta1 = [float(b) for b in self.beta1]

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InvalidInputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON: {exc}") from exc
        cfg = cls.from_dict(obj)
        # relative dataset paths and manifests resolve against the config file
        base = path.parent
        if cfg.manifest and not Path(cfg.manifest).is_absolute():
            cfg.manifest = str(base / cfg.manifest)
        cfg.datasets = [_resolve(d, base) for d in cfg.datasets]
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


def _resolve(entry: str, base: Path) -> str:
    if entry.startswith("synthetic:") or Path(entry).is_absolute():
        return entry
    candidate = base / entry
    return str(candidate) if candidate.exists() else entry


_SYNTH = re.compile(r"^synthetic:(.*)$")


def load_named_dataset(entry: str, manifest: Optional[str] = None,
                       scale: bool = False) -> ClassificationDataset:
    """Resolve a config dataset entry into a classification dataset."""
    m = _SYNTH.match(entry)
    if m:
        params = dict(n=10_000, d=16, m=6, seed=0, separation=2.0)
        for part in filter(None, m.group(1).split(",")):
            key, _, val = part.partition("=")
            if key.strip() not in params:
                raise InvalidInputError(f"unknown synthetic parameter {key!r}")
            params[key.strip()] = float(val) if key.strip() == "separation" else int(val)
        return synthetic_classification(params["n"], params["d"], params["m"],
                                        make_rng(params["seed"], "synthetic"),
                                        params["separation"], name=entry)
    if manifest:
        table = load_manifest(manifest)
        if entry in table:
            path, col = table[entry]
            ds = load_dataset(path, col, scale)
            return ClassificationDataset(ds.features, ds.labels, ds.m, ds.label_names, entry)
    path = Path(entry)
    if not path.exists():
        raise InvalidInputError(f"dataset not found: {entry}")
    return load_dataset(path, scale=scale)
