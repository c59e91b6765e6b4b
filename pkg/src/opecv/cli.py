"""Command line entry point: ``opecv convert|evaluate|select|bench|regret``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .banditgen import build_problem, load_dataset
from .core import InvalidInputError, NumericalDegeneracyError, make_rng
from .estimators import EstimatorSpec, Kind
from .harness.config import BUNDLES, ExperimentConfig, make_bundle
from .harness.runner import bench, write_regret
from .selection import Evaluator, _finite, ocv_select, slope_select


def _problem(args):
    ds = load_dataset(args.dataset, args.label_column, args.scale)
    return ds, build_problem(ds, args.b0, args.b1, make_rng(args.seed, "problem"))


def cmd_convert(args) -> dict:
    ds = load_dataset(args.csv, args.label_column, args.scale)
    if ds.n < 2 * ds.m:
        raise InvalidInputError(f"need at least 2m = {2 * ds.m} examples for a bandit problem, "
                                f"have {ds.n}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(ds.to_dict()), encoding="utf-8")
    return {"out": str(out), "n": ds.n, "d": ds.d, "m": ds.m,
            "label_names": list(ds.label_names)}


def cmd_evaluate(args) -> dict:
    spec = EstimatorSpec.parse(args.estimator)
    _, problem = _problem(args)
    if args.dump_logged:
        problem.logged.save(args.dump_logged)
    ev = Evaluator(problem.logged, problem.target, problem.logging, args.regularization)
    est, var = ev.estimate(spec)
    return {"estimator": spec.to_dict(), "estimate": est, "variance_of_mean": var,
            "true_value": problem.true_value, "n": problem.logged.n}


def cmd_select(args) -> dict:
    _, problem = _problem(args)
    D = problem.logged
    ev = Evaluator(D, problem.target, problem.logging, args.regularization)
    bundle = make_bundle(args.bundle, D, ev.pi)
    if args.method == "slope":
        if bundle.slope_order is None:
            raise InvalidInputError(f"bundle {args.bundle} has no variance order for SLOPE")
        res = slope_select(bundle.slope_order, D, ev.pi, ev.pi0, evaluator=ev)
    else:
        vkind = Kind(args.validator.upper())
        res = ocv_select(ev.pi, D, bundle.candidates, EstimatorSpec(vkind), args.K, args.seed,
                         ev.pi0, train_fraction=args.train_fraction, one_se=not args.no_one_se,
                         allow_biased_validator=vkind is Kind.DM, evaluator=ev)
    out = res.to_dict()
    out["true_value"] = problem.true_value
    return out


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg


def cmd_bench(args) -> dict:
    cfg = _load_config(args)
    return bench(cfg, args.out or cfg.out)


def cmd_regret(args) -> dict:
    cfg = _load_config(args)
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise InvalidInputError(f"--sizes must be comma-separated integers, got {args.sizes!r}")
    return write_regret(cfg, sizes, args.out or cfg.out)


def _problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="classification CSV or converted JSON")
    p.add_argument("--b0", type=float, default=1.0, help="logging policy inverse temperature")
    p.add_argument("--b1", type=float, default=10.0, help="target policy inverse temperature")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-column", type=int, default=-1)
    p.add_argument("--scale", action="store_true", help="min-max scale features")
    p.add_argument("--regularization", type=float, default=1e-3, help="ridge penalty")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opecv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="validate a classification CSV and serialize it")
    p.add_argument("csv")
    p.add_argument("--out", required=True)
    p.add_argument("--label-column", type=int, default=-1)
    p.add_argument("--scale", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("evaluate", help="one estimate and its variance as JSON")
    _problem_args(p)
    p.add_argument("--estimator", required=True, help="KIND or KIND:HYPER, e.g. TruncatedIPS:10")
    p.add_argument("--dump-logged", help="also write the logged dataset as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select", help="one estimator selection as JSON")
    _problem_args(p)
    p.add_argument("--bundle", default="ips-dm-dr", choices=BUNDLES)
    p.add_argument("--validator", default="dr", choices=("ips", "dr", "dm"))
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--method", default="ocv", choices=("ocv", "slope"))
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--no-one-se", action="store_true", help="score by mean loss only")
    p.set_defaults(func=cmd_select)

    for name, func, helptext in (("bench", cmd_bench, "run the full experiment grid"),
                                 ("regret", cmd_regret, "selection regret versus data size")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        if name == "regret":
            p.add_argument("--sizes", default="250,1000,4000")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except (InvalidInputError, NumericalDegeneracyError, OSError, ValueError, KeyError) as exc:
        print(f"opecv {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_finite(result), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
