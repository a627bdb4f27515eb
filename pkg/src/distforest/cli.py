"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 data or I/O error, 4 internal error.
Every subcommand accepts ``--config FILE`` holding a JSON object whose keys
are flag names (``min-samples-leaf`` or ``min_samples_leaf``); flags given on
the command line take precedence over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bench import DEFAULT_BRUTE_SIZES, DEFAULT_FAST_SIZES, run_bench, write_records, write_summary
from .conformal import METHODS, GroupPartition, calibrate
from .data import SYNTHETIC_KINDS, DataError, generate, load_csv, load_features, write_csv
from .forest import DistForest, default_threads, fit_forest
from .metrics import evaluate
from .tree import Criterion, TreeParams, fit_tree

logger = logging.getLogger("distforest")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    """Invalid or inconsistent command-line options."""


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="distforest",
        description="Distributional regression forests with CRPS and pinball entropy splits.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default option values")
    common.add_argument("--threads", type=int, help="worker threads (default: DISTFOREST_NUM_THREADS or all CPUs)")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")

    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        subs[name] = p
        return p

    p = add("fit", "fit a forest on a CSV file and write the model as JSON")
    p.add_argument("--data", help="training CSV")
    p.add_argument("--target", default="y", help="target column (default: y)")
    p.add_argument("--criterion", choices=["crps", "pinball", "mse"], default="crps")
    p.add_argument("--levels", type=_float_list, help="quantile levels for --criterion pinball, e.g. 0.1,0.5,0.9")
    p.add_argument("--trees", type=int, default=50)
    p.add_argument("--subsample", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--min-samples-leaf", type=int, default=5)
    p.add_argument("--min-samples-split", type=int, default=10)
    p.add_argument("--no-loo", action="store_true", help="score splits with plain instead of leave-one-out entropies")
    p.add_argument("--out", help="model JSON path")

    p = add("predict", "predict quantiles for the rows of a CSV file")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--target", help="column to ignore if present")
    p.add_argument("--levels", type=_float_list, default=[0.1, 0.5, 0.9])
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = add("eval", "score a model on labelled data")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--target", default="y")
    p.add_argument("--grid-step", type=float, default=0.02)
    p.add_argument("--format", choices=["json", "table"], default="json")

    p = add("conformal-calibrate", "attach split-conformal calibration to a model")
    p.add_argument("--model")
    p.add_argument("--data", help="calibration CSV, disjoint from the training data")
    p.add_argument("--target", default="y")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--method", choices=list(METHODS), default="distributional")
    p.add_argument("--group-depth", type=int, help="calibrate per cell of a tree truncated at this depth")
    p.add_argument("--partition-data", help="CSV used to grow the partition tree (needed with --group-depth)")
    p.add_argument("--out", help="calibrated model JSON path")

    p = add("conformal-predict", "prediction intervals from a calibrated model")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--target", help="if present, also report empirical coverage on stderr")
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = add("synth", "write a synthetic data set")
    p.add_argument("--kind", choices=list(SYNTHETIC_KINDS), default="gamma")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = add("bench", "time the CRPS prefix scan against per-prefix recomputation")
    p.add_argument("--fast-sizes", type=_int_list, default=list(DEFAULT_FAST_SIZES))
    p.add_argument("--brute-sizes", type=_int_list, default=list(DEFAULT_BRUTE_SIZES))
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV of timing records")
    p.add_argument("--summary", help="JSON summary path (default: stdout)")
    return parser, subs


_REQUIRED = {
    "fit": ("data", "out"),
    "predict": ("model", "data"),
    "eval": ("model", "data"),
    "conformal-calibrate": ("model", "data", "out"),
    "conformal-predict": ("model", "data"),
    "synth": ("out",),
    "bench": ("out",),
}


def _apply_config(
    args: argparse.Namespace,
    top: argparse.ArgumentParser,
    parser: argparse.ArgumentParser,
    argv: Sequence[str],
) -> argparse.Namespace:
    path = Path(args.config)
    try:
        config = json.loads(path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc.msg}") from None
    if not isinstance(config, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    known = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise UsageError(f"unknown option {key!r} in config file {path}")
        action = known[dest]
        if isinstance(value, str) and action.type is not None:
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config option {key!r}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config option {key!r} must be one of {list(action.choices)}")
        defaults[dest] = value
    parser.set_defaults(**defaults)
    return top.parse_args(list(argv))


def _check_required(args: argparse.Namespace) -> None:
    for dest in _REQUIRED[args.command]:
        if getattr(args, dest, None) in (None, ""):
            raise UsageError(f"{args.command}: missing required option --{dest.replace('_', '-')}")


def _threads(args: argparse.Namespace) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        return args.threads
    try:
        return default_threads()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_model(path: str) -> DistForest:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc.strerror or exc}") from None
    try:
        return DistForest.from_dict(json.loads(text))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path} is not a valid model file: {exc}") from None


def _write_model(forest: DistForest, path: str) -> None:
    try:
        Path(path).write_text(json.dumps(forest.to_dict(), sort_keys=True) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from None


def _features_for(forest: DistForest, path: str, drop: str | None) -> np.ndarray:
    X, names = load_features(path, drop)
    if X.shape[1] != forest.n_features:
        raise DataError(f"{path} has {X.shape[1]} feature columns ({names}); the model expects {forest.n_features}")
    return X


def _write_rows(path: str | None, header: list[str], rows: np.ndarray) -> None:
    fh = sys.stdout if path is None else open(path, "w", newline="")
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    finally:
        if path is not None:
            fh.close()


def cmd_fit(args: argparse.Namespace) -> int:
    if args.criterion == "pinball" and not args.levels:
        raise UsageError("fit: --criterion pinball requires --levels")
    if args.criterion != "pinball" and args.levels:
        raise UsageError(f"fit: --levels only applies to --criterion pinball, not {args.criterion}")
    if args.trees < 1:
        raise UsageError("fit: --trees must be at least 1")
    if not 0.0 < args.subsample <= 1.0:
        raise UsageError("fit: --subsample must be in (0, 1]")
    try:
        criterion = Criterion(args.criterion, tuple(args.levels) if args.levels else None)
        params = TreeParams(args.max_depth, args.min_samples_leaf, args.min_samples_split, not args.no_loo)
    except ValueError as exc:
        raise UsageError(f"fit: {exc}") from None
    data = load_csv(args.data, args.target)
    forest = fit_forest(data, criterion, params, args.trees, args.subsample, args.seed, _threads(args))
    _write_model(forest, args.out)
    summary = {
        "model": args.out,
        "criterion": criterion.name,
        "trees": forest.n_trees,
        "rows": len(data),
        "rows_per_tree": int(forest.sample_indices[0].shape[0]),
        "mean_leaves": float(np.mean([t.leaves.shape[0] for t in forest.trees])),
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    levels = np.asarray(args.levels, dtype=float)
    if levels.size == 0 or np.any(levels < 0) or np.any(levels > 1):
        raise UsageError("predict: --levels must lie in [0, 1]")
    forest = _load_model(args.model)
    X = _features_for(forest, args.data, args.target)
    q = forest.predict_quantiles(X, levels)
    _write_rows(args.out, [f"q_{t:g}" for t in levels], q)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    forest = _load_model(args.model)
    data = load_csv(args.data, args.target)
    if data.n_features != forest.n_features:
        raise DataError(f"{args.data} has {data.n_features} features; the model expects {forest.n_features}")
    try:
        report = evaluate(forest, data, args.grid_step)
    except ValueError as exc:
        if "grid step" in str(exc):
            raise UsageError(f"eval: {exc}") from None
        raise
    print(report.to_json() if args.format == "json" else report.to_table())
    return EXIT_OK


def cmd_conformal_calibrate(args: argparse.Namespace) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise UsageError("conformal-calibrate: --alpha must be in (0, 1)")
    if (args.group_depth is None) != (args.partition_data is None):
        raise UsageError("conformal-calibrate: --group-depth and --partition-data must be given together")
    if args.group_depth is not None and args.group_depth < 0:
        raise UsageError("conformal-calibrate: --group-depth must be non-negative")
    forest = _load_model(args.model)
    calib = load_csv(args.data, args.target)
    if calib.n_features != forest.n_features:
        raise DataError(f"{args.data} has {calib.n_features} features; the model expects {forest.n_features}")
    partition = None
    if args.group_depth is not None:
        pdata = load_csv(args.partition_data, args.target)
        if pdata.n_features != forest.n_features:
            raise DataError(f"{args.partition_data} has {pdata.n_features} features; the model expects {forest.n_features}")
        tree = fit_tree(pdata, Criterion("crps"), TreeParams(max_depth=args.group_depth))
        partition = GroupPartition(tree, args.group_depth)
    forest.conformal = calibrate(forest, calib, args.alpha, args.method, partition)
    _write_model(forest, args.out)
    print(json.dumps(forest.conformal.to_dict() | {"partition": None if partition is None else partition.groups}, sort_keys=True))
    return EXIT_OK


def cmd_conformal_predict(args: argparse.Namespace) -> int:
    forest = _load_model(args.model)
    if forest.conformal is None:
        raise DataError(f"{args.model} carries no conformal calibration; run conformal-calibrate first")
    X = _features_for(forest, args.data, args.target)
    lo, hi = forest.conformal.predict_interval(forest, X)
    _write_rows(args.out, ["lo", "hi"], np.column_stack([lo, hi]))
    if args.target is not None:
        values, header = load_features(args.data)
        if args.target in header:
            y = values[:, header.index(args.target)]
            cov = float(np.mean((y >= lo) & (y <= hi)))
            print(json.dumps({"coverage": cov, "mean_width": float(np.mean(hi - lo))}), file=sys.stderr)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise UsageError("synth: --n must be at least 1")
    data = generate(args.kind, args.n, args.seed)
    try:
        write_csv(args.out, data)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc.strerror or exc}") from None
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    for name in ("fast_sizes", "brute_sizes"):
        sizes = getattr(args, name)
        if any(n < 2 for n in sizes) or sizes != sorted(sizes):
            raise UsageError(f"bench: --{name.replace('_', '-')} must be ascending sizes of at least 2")
    if not args.fast_sizes:
        raise UsageError("bench: --fast-sizes must not be empty")
    if args.repeats < 3:
        raise UsageError("bench: --repeats must be at least 3")
    records, summary = run_bench(args.fast_sizes, args.brute_sizes, args.repeats, args.seed)
    try:
        write_records(args.out, records)
        if args.summary:
            write_summary(args.summary, summary)
    except OSError as exc:
        raise DataError(f"cannot write bench output: {exc.strerror or exc}") from None
    if not args.summary:
        print(json.dumps(summary, indent=2))
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "conformal-calibrate": cmd_conformal_calibrate,
    "conformal-predict": cmd_conformal_predict,
    "synth": cmd_synth,
    "bench": cmd_bench,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.config:
            try:
                args = _apply_config(args, parser, subs[args.command], argv)
            except SystemExit as exc:
                return int(exc.code or 0)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        _check_required(args)
        return COMMANDS[args.command](args)
    except BrokenPipeError:
        # downstream reader closed early, e.g. `| head`; silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except UsageError as exc:
        print(f"distforest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError) as exc:
        print(f"distforest: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - reported as internal failure
        logger.debug("internal error", exc_info=True)
        print(f"distforest: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
