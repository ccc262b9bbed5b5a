"""Command-line entry point.

Subcommands: ``synth``, ``train``, ``evaluate``, ``tune``, ``sweep-alpha``,
``report``. Every subcommand accepts ``--config FILE`` (JSON); explicit flags
override values from the file, and the merged configuration is written next
to the outputs as ``config.json``.

Exit codes: 0 on success, 1 on a runtime or numeric failure, 2 on a usage or
configuration error.
"""

import argparse
import csv
import json
import logging
import os
import platform
import sys
from dataclasses import replace

import numpy as np

from . import __version__, harness
from .data import (
    SyntheticConfig,
    generate_synthetic,
    load_csv,
    make_rng,
    save_csv,
    split_dataset,
    standardize_features,
)
from .exceptions import ConfigError, DroCoxError, ParseError
from .model import load_checkpoint, save_checkpoint
from .train import TRAINER_KINDS, TrainConfig, TrainingAborted, train

logger = logging.getLogger("drocox")

LATENT_GROUP = "latent_group"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def version_string():
    return (f"drocox {__version__} (python {platform.python_version()}, "
            f"numpy {np.__version__}, {platform.system().lower()}-{platform.machine()})")


# --------------------------------------------------------------------------
# Config merging


def _csv_list(text, cast=str):
    if isinstance(text, (list, tuple)):
        return [cast(v) for v in text]
    return [cast(v.strip()) for v in str(text).split(",") if v.strip()]


def _merged(args, defaults, aliases=None):
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(from_file, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        for old, new in (aliases or {}).items():
            if old in from_file:
                from_file[new] = from_file.pop(old)
        unknown = set(from_file) - set(defaults)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        cfg.update(from_file)
    for k, v in vars(args).items():
        if k in defaults:
            cfg[k] = v
    return cfg


def _echo_config(cfg, out_dir, name="config.json"):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _header(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return next(csv.reader(fh), [])
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def _load(path, cfg, extra_groups=(), feature_cols=None):
    """Load a dataset, treating ``latent_group`` as a group column when present."""
    groups = list(dict.fromkeys([*_csv_list(cfg.get("group_cols") or []), *extra_groups]))
    if LATENT_GROUP in _header(path) and LATENT_GROUP not in groups:
        groups.append(LATENT_GROUP)
    return load_csv(path, cfg["time_col"], cfg["event_col"], groups, feature_cols)


def _add_io_flags(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file with default values for this command's flags")
    p.add_argument("--time-col", dest="time_col", default=S, help="duration column (default: time)")
    p.add_argument("--event-col", dest="event_col", default=S,
                   help="event indicator column, 1 = event (default: status)")
    p.add_argument("--group-cols", dest="group_cols", default=S,
                   help="comma-separated categorical columns kept out of the features; "
                        "latent_group is always treated as one when present")


_IO_DEFAULTS = {"time_col": "time", "event_col": "status", "group_cols": []}


def _add_train_flags(p, with_trainer=True):
    S = argparse.SUPPRESS
    if with_trainer:
        p.add_argument("--trainer", default=S, choices=TRAINER_KINDS, help="trainer kind (default: erm)")
        p.add_argument("--alpha", type=float, default=S,
                       help="minimum subpopulation probability, in (0, 1], for the DRO trainers")
        p.add_argument("--lam", type=float, default=S,
                       help="regularization weight for the fairness-regularized trainers")
        p.add_argument("--lr", type=float, default=S, help="Adam learning rate (default: 0.01)")
    p.add_argument("--model", default=S, choices=("linear", "mlp"), help="risk model (default: linear)")
    p.add_argument("--iterations", type=int, default=S,
                   help="number of full-batch Adam steps (default: 500)")
    p.add_argument("--seed", type=int, default=S, help="random seed (default: 0)")
    p.add_argument("--n1", type=int, default=S,
                   help="size of the first half for the split trainers (default: n // 2)")
    p.add_argument("--hidden", type=int, default=S, help="MLP hidden width (default: 24)")
    p.add_argument("--gamma", type=float, default=S,
                   help="distance scale of the individual fairness metric (default: 0.01)")
    p.add_argument("--uncensored-only-dro", dest="uncensored_only_dro", action="store_true",
                   default=S, help="average the DRO objective over uncensored records only")
    p.add_argument("--standardize", action="store_true", default=S,
                   help="z-score features with training-set statistics")


_TRAIN_DEFAULTS = {
    "trainer": "erm", "alpha": None, "lam": None, "lr": 0.01, "model": "linear",
    "iterations": 500, "seed": 0, "n1": None, "hidden": 24, "gamma": 0.01,
    "uncensored_only_dro": False, "standardize": False,
}


def _train_config(cfg, **overrides):
    tc = TrainConfig(
        kind=cfg["trainer"], model=cfg["model"], lr=float(cfg["lr"]),
        max_iterations=int(cfg["iterations"]), seed=int(cfg["seed"]), alpha=cfg["alpha"],
        lam=cfg["lam"], n1=cfg["n1"], patience=int(cfg.get("patience", 0)), hidden=int(cfg["hidden"]),
        gamma=float(cfg["gamma"]), group_attr=cfg.get("group_attr"),
        intersect_attrs=tuple(_csv_list(cfg.get("intersect") or [])),
        uncensored_only_dro=bool(cfg["uncensored_only_dro"]),
    )
    return replace(tc, **overrides).validate()


# --------------------------------------------------------------------------
# Commands

_SYNTH_DEFAULTS = {"n": 1000, "k": None, "pi": None, "d": 4, "coefficients": None,
                   "censoring_rate": 0.0, "seed": 0, "out": "synthetic.csv"}


def cmd_synth(args):
    cfg = _merged(args, _SYNTH_DEFAULTS, {"mixture_weights": "pi"})
    pi = _csv_list(cfg["pi"], float) if cfg["pi"] is not None else None
    k = int(cfg["k"]) if cfg["k"] is not None else (len(pi) if pi else 2)
    if pi is None:
        pi = [1.0 / k] * k
    if len(pi) != k:
        raise ConfigError(f"--pi has {len(pi)} entries but --k is {k}")
    coef = cfg["coefficients"]
    if coef is None:
        # per-group coefficients drawn from a stream separate from the data
        coef = make_rng((int(cfg["seed"]), 2)).standard_normal((k, int(cfg["d"]))).tolist()
    elif isinstance(coef, str):
        coef = [_csv_list(row, float) for row in coef.split(";")]
    syn = SyntheticConfig(int(cfg["n"]), tuple(pi), tuple(map(tuple, coef)),
                          float(cfg["censoring_rate"]), int(cfg["seed"])).validate()
    ds = generate_synthetic(syn)
    out = cfg["out"]
    save_csv(ds, out)
    cfg.update(pi=list(syn.mixture_weights), coefficients=[list(c) for c in syn.coefficients])
    _echo_config(cfg, os.path.dirname(os.path.abspath(out)), os.path.basename(out) + ".config.json")
    logger.info("wrote %d records to %s", ds.n, out)
    return EXIT_OK


def cmd_train(args):
    defaults = {**_IO_DEFAULTS, **_TRAIN_DEFAULTS, "data": None, "out_dir": "run",
                "val_fraction": 0.0, "patience": 0}
    cfg = _merged(args, defaults)
    if not cfg["data"]:
        raise ConfigError("--data is required")
    tc = _train_config(cfg)
    ds = _load(cfg["data"], cfg)
    val = None
    if float(cfg["val_fraction"]) > 0:
        ds, val = split_dataset(ds, (1 - float(cfg["val_fraction"]), float(cfg["val_fraction"])),
                                (tc.seed, 3))
    extra = {"feature_names": list(ds.feature_names)}
    if cfg["standardize"]:
        parts, means, stds = standardize_features(ds, [val] if val is not None else [])
        ds, val = parts[0], (parts[1] if val is not None else None)
        extra["standardize"] = {"means": means.tolist(), "stds": stds.tolist()}
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _echo_config(cfg, out_dir)
    try:
        model, trace = train(ds, tc, val=val)
    except TrainingAborted as exc:
        exc.trace.to_csv(os.path.join(out_dir, "trace.csv"))
        raise
    save_checkpoint(model, os.path.join(out_dir, "checkpoint.json"), tc.to_dict(), extra)
    trace.to_csv(os.path.join(out_dir, "trace.csv"))
    final = trace.column("objective")[-1]
    print(f"final objective: {final:.10g}")
    return EXIT_OK


def _apply_standardize(ds, payload):
    st = payload.get("standardize")
    if not st:
        return ds
    return ds.with_features((ds.X - np.asarray(st["means"])) / np.asarray(st["stds"]))


def cmd_evaluate(args):
    defaults = {**_IO_DEFAULTS, "checkpoint": None, "data": None, "train_data": None,
                "groups": [], "intersect": [], "gamma": 0.01, "out": "metrics.csv"}
    cfg = _merged(args, defaults)
    if not cfg["checkpoint"] or not cfg["data"]:
        raise ConfigError("--checkpoint and --data are required")
    try:
        model, payload = load_checkpoint(cfg["checkpoint"])
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read checkpoint: {exc}") from None
    features = payload.get("feature_names")
    groups = _csv_list(cfg["groups"])
    inter = _csv_list(cfg["intersect"])
    ds = _apply_standardize(_load(cfg["data"], cfg, [*groups, *inter], features), payload)
    train_ds = None
    if cfg["train_data"]:
        train_ds = _apply_standardize(_load(cfg["train_data"], cfg, (), features), payload)
    rows = []
    for attr in groups or [None]:
        rep = harness.evaluate_model(model, ds, train_ds, attr, inter, float(cfg["gamma"]))
        rows.append(("NA" if attr is None else attr, rep))
    out = cfg["out"]
    out_dir = os.path.dirname(os.path.abspath(out))
    os.makedirs(out_dir, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("group_attr," + rows[0][1].csv_header() + "\n")
        for attr, rep in rows:
            fh.write(f"{attr},{rep.csv_row()}\n")
    for attr, rep in rows:
        print(f"[group attribute: {attr}]")
        print(rep.table())
    return EXIT_OK


_TUNE_DEFAULTS = {
    **_IO_DEFAULTS, "data": None, "out_dir": "tune", "trainers": ["erm", "dro"],
    "models": ["linear"], "lrs": list(harness.DEFAULT_LEARNING_RATES),
    "alphas": list(harness.DEFAULT_ALPHAS), "lambdas": list(harness.DEFAULT_LAMBDAS),
    "repeats": 10, "seeds": None, "objective": "ci_percent", "tolerance": 0.05,
    "test_fraction": 0.2, "val_fraction": 0.2, "split_seed": 0, "group_attr": None,
    "intersect": [], "iterations": 500, "hidden": 24, "gamma": 0.01, "n1": None,
    "uncensored_only_dro": False, "standardize": False, "jobs": 1,
}


def cmd_tune(args):
    cfg = _merged(args, _TUNE_DEFAULTS)
    if not cfg["data"]:
        raise ConfigError("--data is required")
    inter = _csv_list(cfg["intersect"])
    group_attr = cfg["group_attr"]
    ds = _load(cfg["data"], cfg, [g for g in [group_attr, *inter] if g])
    if group_attr is None and LATENT_GROUP in ds.groups:
        group_attr = cfg["group_attr"] = LATENT_GROUP
    if not inter:
        # F_cap over every sensitive attribute that was loaded
        inter = list(ds.groups)
    grid = harness.GridSpec(
        tuple(_csv_list(cfg["lrs"], float)), tuple(_csv_list(cfg["lambdas"], float)),
        tuple(_csv_list(cfg["alphas"], float)), tuple(_csv_list(cfg["models"])),
        tuple(_csv_list(cfg["trainers"])),
    )
    for t in grid.trainer_kinds:
        if t not in TRAINER_KINDS:
            raise ConfigError(f"unknown trainer kind {t!r}")
    repeats = int(cfg["repeats"])
    seeds = _csv_list(cfg["seeds"], int) if cfg["seeds"] is not None else None
    base = TrainConfig(max_iterations=int(cfg["iterations"]), hidden=int(cfg["hidden"]),
                       gamma=float(cfg["gamma"]), n1=cfg["n1"], group_attr=group_attr,
                       intersect_attrs=tuple(inter),
                       uncensored_only_dro=bool(cfg["uncensored_only_dro"]))
    out_dir = cfg["out_dir"]
    _echo_config(cfg, out_dir)
    result = harness.run_experiment(
        ds, grid, base=base, objective=cfg["objective"], tolerance=float(cfg["tolerance"]),
        repeats=repeats, seeds=seeds, test_fraction=float(cfg["test_fraction"]),
        val_fraction=float(cfg["val_fraction"]), split_seed=int(cfg["split_seed"]),
        group_attr=group_attr, intersect_attrs=inter, standardize=bool(cfg["standardize"]),
        jobs=int(cfg["jobs"]), trace_dir=os.path.join(out_dir, "traces"),
    )
    harness.save_result(result, os.path.join(out_dir, "result.json"))
    harness.emit_report(result, out_dir)
    print(harness.report_markdown(result), end="")
    return EXIT_OK


def cmd_sweep_alpha(args):
    defaults = {**_IO_DEFAULTS, **_TRAIN_DEFAULTS, "data": None, "alphas": list(harness.DEFAULT_ALPHAS),
                "test_fraction": 0.2, "split_seed": 0, "group_attr": None, "intersect": [],
                "out": "sweep.csv"}
    defaults["trainer"] = "dro"
    cfg = _merged(args, defaults)
    if not cfg["data"]:
        raise ConfigError("--data is required")
    inter = _csv_list(cfg["intersect"])
    group_attr = cfg["group_attr"]
    ds = _load(cfg["data"], cfg, [g for g in [group_attr, *inter] if g])
    if group_attr is None and LATENT_GROUP in ds.groups:
        group_attr = cfg["group_attr"] = LATENT_GROUP
    if not inter:
        # F_cap over every sensitive attribute that was loaded
        inter = list(ds.groups)
    alphas = _csv_list(cfg["alphas"], float)
    tc = _train_config(cfg, alpha=alphas[0] if alphas else None)
    tr, te = split_dataset(ds, (1 - float(cfg["test_fraction"]), float(cfg["test_fraction"])),
                           int(cfg["split_seed"]))
    if cfg["standardize"]:
        (tr, te), _, _ = standardize_features(tr, [te])
    rows = harness.sweep_alpha(tr, te, alphas, tc, group_attr, inter)
    out = cfg["out"]
    _echo_config(cfg, os.path.dirname(os.path.abspath(out)), os.path.basename(out) + ".config.json")
    harness.write_sweep_csv(rows, out)
    print(harness.format_sweep(rows))
    return EXIT_OK


def cmd_report(args):
    cfg = _merged(args, {"input": None, "out_dir": None})
    if not cfg["input"]:
        raise ConfigError("--input is required")
    if not os.path.isfile(cfg["input"]):
        raise ConfigError(f"no such result file: {cfg['input']}")
    try:
        result = harness.load_result(cfg["input"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{cfg['input']}: not an experiment result ({exc})") from None
    out_dir = cfg["out_dir"] or os.path.dirname(os.path.abspath(cfg["input"]))
    harness.emit_report(result, out_dir)
    print(harness.report_markdown(result), end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    S = argparse.SUPPRESS
    p = _Parser(prog="drocox", description="DRO training and fairness evaluation for Cox models.")
    p.add_argument("--version", action="version", version=version_string())
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at debug level")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic latent-group dataset")
    s.add_argument("--config", help="JSON file with default values (SyntheticConfig field names accepted)")
    s.add_argument("--n", type=int, default=S, help="number of records (default: 1000)")
    s.add_argument("--k", type=int, default=S, help="number of latent groups (default: length of --pi, else 2)")
    s.add_argument("--pi", default=S, help="comma-separated mixture weights (default: uniform)")
    s.add_argument("--d", type=int, default=S, help="feature dimension when coefficients are drawn (default: 4)")
    s.add_argument("--coefficients", default=S,
                   help="per-group coefficients, rows separated by ';' (default: standard normal draws)")
    s.add_argument("--censoring-rate", dest="censoring_rate", type=float, default=S,
                   help="rate of exponential censoring times, 0 for none (default: 0)")
    s.add_argument("--seed", type=int, default=S, help="random seed (default: 0)")
    s.add_argument("-o", "--out", default=S, help="output CSV path (default: synthetic.csv)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train one model and write checkpoint.json and trace.csv")
    _add_io_flags(s)
    _add_train_flags(s)
    s.add_argument("--data", default=S, help="training CSV")
    s.add_argument("--out-dir", dest="out_dir", default=S, help="output directory (default: run)")
    s.add_argument("--val-fraction", dest="val_fraction", type=float, default=S,
                   help="hold out this fraction for early stopping (default: 0, no hold-out)")
    s.add_argument("--patience", type=int, default=S,
                   help="early-stopping patience in iterations; 0 disables (default: 0)")
    s.add_argument("--group-attr", dest="group_attr", default=S,
                   help="group attribute for the group-fairness regularizer")
    s.add_argument("--intersect", default=S,
                   help="comma-separated attributes for the intersectional regularizer")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    _add_io_flags(s)
    s.add_argument("--checkpoint", default=S, help="checkpoint.json written by train")
    s.add_argument("--data", default=S, help="evaluation CSV")
    s.add_argument("--train-data", dest="train_data", default=S,
                   help="training CSV for the Breslow baseline; IBS is NA without it")
    s.add_argument("--groups", default=S,
                   help="comma-separated sensitive attributes; one output row per attribute")
    s.add_argument("--intersect", default=S,
                   help="comma-separated attributes whose intersections define F_cap")
    s.add_argument("--gamma", type=float, default=S, help="individual fairness scale (default: 0.01)")
    s.add_argument("--out", default=S, help="metrics CSV path (default: metrics.csv)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("tune", help="grid search with repeated validation splits")
    _add_io_flags(s)
    s.add_argument("--data", default=S, help="dataset CSV")
    s.add_argument("--out-dir", dest="out_dir", default=S, help="output directory (default: tune)")
    s.add_argument("--trainers", default=S, help="comma-separated trainer kinds (default: erm,dro)")
    s.add_argument("--models", default=S, help="comma-separated model kinds (default: linear)")
    s.add_argument("--lrs", default=S, help="learning-rate grid (default: 0.01,0.001,0.0001)")
    s.add_argument("--alphas", default=S, help="alpha grid (default: 0.1,0.15,0.2,0.3,0.4,0.5)")
    s.add_argument("--lambdas", default=S, help="lambda grid (default: 1,0.7,0.4)")
    s.add_argument("--repeats", type=int, default=S, help="number of repeats (default: 10)")
    s.add_argument("--seeds", default=S, help="comma-separated seeds, one per repeat (default: 0..repeats-1)")
    s.add_argument("--objective", default=S, choices=("ci_percent", "f_a"),
                   help="fairness metric minimized by the selection rule (default: ci_percent)")
    s.add_argument("--tolerance", type=float, default=S,
                   help="allowed relative c-index drop from the reference (default: 0.05)")
    s.add_argument("--test-fraction", dest="test_fraction", type=float, default=S, help="(default: 0.2)")
    s.add_argument("--val-fraction", dest="val_fraction", type=float, default=S, help="(default: 0.2)")
    s.add_argument("--split-seed", dest="split_seed", type=int, default=S,
                   help="seed of the fixed test split (default: 0)")
    s.add_argument("--group-attr", dest="group_attr", default=S,
                   help="sensitive attribute for CI and F_G (default: latent_group if present)")
    s.add_argument("--intersect", default=S, help="comma-separated attributes for F_cap (default: all group columns)")
    s.add_argument("--iterations", type=int, default=S, help="Adam steps per run (default: 500)")
    s.add_argument("--hidden", type=int, default=S, help="MLP hidden width (default: 24)")
    s.add_argument("--gamma", type=float, default=S, help="individual fairness scale (default: 0.01)")
    s.add_argument("--n1", type=int, default=S, help="first-half size for the split trainers")
    s.add_argument("--uncensored-only-dro", dest="uncensored_only_dro", action="store_true", default=S,
                   help="average the DRO objective over uncensored records only")
    s.add_argument("--standardize", action="store_true", default=S,
                   help="z-score features with training-set statistics")
    s.add_argument("--jobs", type=int, default=S, help="parallel worker processes (default: 1)")
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("sweep-alpha", help="train the DRO trainer over a list of alphas")
    _add_io_flags(s)
    _add_train_flags(s, with_trainer=False)
    s.add_argument("--trainer", default=S, choices=("dro", "dro_split", "dro_split_one_side"),
                   help="DRO trainer kind (default: dro)")
    s.add_argument("--lr", type=float, default=S, help="Adam learning rate (default: 0.01)")
    s.add_argument("--data", default=S, help="dataset CSV")
    s.add_argument("--alphas", default=S, help="comma-separated alphas (default: 0.1,0.15,0.2,0.3,0.4,0.5)")
    s.add_argument("--test-fraction", dest="test_fraction", type=float, default=S, help="(default: 0.2)")
    s.add_argument("--split-seed", dest="split_seed", type=int, default=S, help="(default: 0)")
    s.add_argument("--group-attr", dest="group_attr", default=S,
                   help="sensitive attribute for CI and F_G (default: latent_group if present)")
    s.add_argument("--intersect", default=S, help="comma-separated attributes for F_cap (default: all group columns)")
    s.add_argument("-o", "--out", default=S, help="output CSV (default: sweep.csv)")
    s.set_defaults(func=cmd_sweep_alpha)

    s = sub.add_parser("report", help="write report.csv/report.md/chosen.json from result.json")
    s.add_argument("--config", help="JSON file with default values")
    s.add_argument("--input", default=S, help="result.json written by tune")
    s.add_argument("--out-dir", dest="out_dir", default=S,
                   help="output directory (default: next to the input)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"drocox {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DroCoxError, ArithmeticError, FloatingPointError) as exc:
        print(f"drocox {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"drocox {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
