"""Command-line front end.

Every option can also be given in a plain-text ``key = value`` file passed with
``--config``; command-line values override the file. Each run echoes its
resolved settings (in the same file format) to stderr and to
``<out>/resolved_config.txt``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from metashap import __version__
from metashap.dataset import (
    DEFAULT_COUNTS,
    TARGETS,
    LookupEvaluator,
    generate_bragg,
    import_csv,
    save_dataset,
    split,
)
from metashap.dispersion import (
    ParameterRatios,
    band_diagram,
    find_band_gaps,
    write_band_csv,
    write_gap_json,
)
from metashap.errors import DomainError, FormatError
from metashap.game import DEMO_GAMES, load_game, monotone_modify, shapley_values
from metashap.regress import (
    evaluate,
    fit_forest,
    fit_mlp,
    fit_poly_linear,
    load_model,
    metrics_report,
    save_model,
    tune_forest,
)
from metashap.regress.mlp import (
    BRAGG_CUTOFF_CONFIG,
    BRAGG_WIDTH_CONFIG,
    SONIC_CUTOFF_CONFIG,
    SONIC_WIDTH_CONFIG,
    TrainingDiverged,
    with_epochs,
)
from metashap.sensitivity import (
    BRAGG_BASE,
    BRAGG_RANGES,
    PLAYERS,
    SONIC_BASE,
    DispersionEvaluator,
    SweepSpec,
    cell_to_dict,
    continuous_map,
    dominance_map,
    make_axis,
    write_continuous_csv,
    write_map_csv,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class ConfigError(DomainError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


# Value converters. Each takes (field, text) and raises ConfigError.


def _float(field, text):
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(field, f"expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(field, f"expected a finite number, got {text!r}")
    return value


def _positive_float(field, text):
    value = _float(field, text)
    if value <= 0:
        raise ConfigError(field, f"must be positive, got {text!r}")
    return value


def _int(field, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(field, f"expected an integer, got {text!r}") from None


def _nonneg_int(field, text):
    value = _int(field, text)
    if value < 0:
        raise ConfigError(field, f"must be >= 0, got {text!r}")
    return value


def _pos_int(field, text):
    value = _int(field, text)
    if value < 1:
        raise ConfigError(field, f"must be >= 1, got {text!r}")
    return value


def _fraction(field, text):
    value = _float(field, text)
    if not 0 < value < 1:
        raise ConfigError(field, f"must lie in (0, 1), got {text!r}")
    return value


def _bool(field, text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(field, f"expected true/false, got {text!r}")


def _text(field, text):
    if not text.strip():
        raise ConfigError(field, "value is empty")
    return text.strip()


def _choice(*options):
    def convert(field, text):
        text = text.strip()
        if text not in options:
            raise ConfigError(field, f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return convert


def _float_list(field, text, count=None):
    parts = [p for p in text.replace(";", ",").split(",")]
    if not text.strip():
        raise ConfigError(field, "value is empty")
    values = [_float(field, p.strip()) for p in parts]
    if count is not None and len(values) != count:
        raise ConfigError(field, f"expected {count} comma-separated numbers, got {len(values)}")
    return tuple(values)


def _ratios(field, text):
    values = _float_list(field, text, 3)
    if any(v <= 0 for v in values):
        raise ConfigError(field, f"ratios must be positive, got {text!r}")
    return values


def _ratio_rows(field, text):
    """One or more ``e,rho,h`` rows separated by ``;``."""
    rows = [r for r in text.split(";") if r.strip()]
    if not rows:
        raise ConfigError(field, "value is empty")
    return tuple(_ratios(field, r) for r in rows)


def _int_list(field, text):
    if not text.strip():
        raise ConfigError(field, "value is empty")
    return tuple(_pos_int(field, p.strip()) for p in text.split(","))


def _counts(field, text):
    values = _int_list(field, text)
    if len(values) != 3:
        raise ConfigError(field, f"expected 3 counts, got {len(values)}")
    return values


def _axis(field, text):
    """``log:lo:hi:n``, ``lin:lo:hi:n`` or an explicit comma-separated list."""
    text = text.strip()
    if not text:
        raise ConfigError(field, "axis is empty")
    head = text.split(":")[0]
    if head in ("log", "lin", "linear"):
        parts = text.split(":")
        if len(parts) != 4:
            raise ConfigError(field, f"expected {head}:low:high:count, got {text!r}")
        lo, hi = _float(field, parts[1]), _float(field, parts[2])
        count = _int(field, parts[3])
        if count < 1:
            raise ConfigError(field, "axis is empty")
        if head == "log" and (lo <= 0 or hi <= 0):
            raise ConfigError(field, "log axis bounds must be positive")
        return make_axis(lo, hi, count, "log" if head == "log" else "linear")
    return _float_list(field, text)


# Option tables: key -> (default text or None, converter, help).

GLOBAL_OPTIONS = {
    "seed": ("0", _nonneg_int, "random seed for splits, bootstraps and initialisation"),
    "out": ("metashap-out", _text, "output directory"),
}

COMMAND_OPTIONS = {
    "band": {
        "ratios": (None, _ratios, "E,rho,h ratios, e.g. 50,2,1"),
        "omega_max": (None, _positive_float, "upper angular frequency of the diagram (rad/s)"),
        "samples": ("2048", _pos_int, "diagram samples"),
    },
    "qoi": {
        "ratios": (None, _ratios, "E,rho,h ratios"),
    },
    "shapley": {
        "demo": (None, _choice(*DEMO_GAMES), "built-in game"),
        "game": (None, _text, "game JSON file"),
        "modify": ("false", _bool, "apply the monotone modification first"),
        "format": ("json", _choice("json", "table"), "stdout format"),
        "tie_tol": ("1e-9", _positive_float, "relative tie tolerance"),
    },
    "dominance": {
        "mode": ("bragg", _choice("bragg", "sonic", "continuous"), "sweep kind"),
        "e_axis": (None, _axis, "E-ratio axis"),
        "rho_axis": (None, _axis, "density-ratio axis"),
        "h_axis": (None, _axis, "thickness-ratio axis"),
        "x1_axis": (None, _axis, "x1 axis (continuous mode)"),
        "x2_axis": (None, _axis, "x2 axis (continuous mode)"),
        "base": (None, _ratios, "base point E,rho,h"),
        "direction": ("decrease", _choice("decrease", "increase"), "improvement direction"),
        "qoi": ("first_cutoff", _choice("first_cutoff", "gap_width"), "quantity of interest"),
        "lookup": (None, _text, "QoI table CSV (sonic mode)"),
        "cells_json": ("false", _bool, "also write per-cell games to cells.json"),
        "tie_tol": ("1e-9", _positive_float, "relative tie tolerance"),
    },
    "dataset gen": {
        "counts": (",".join(map(str, DEFAULT_COUNTS)), _counts, "grid counts for E,rho,h"),
    },
    "dataset import": {
        "csv": (None, _text, "QoI table to import"),
    },
    "train": {
        "data": (None, _text, "dataset CSV"),
        "model": ("forest", _choice("poly", "forest", "mlp"), "model kind"),
        "target": ("cutoff", _choice(*TARGETS), "regression target"),
        "degree": ("3", _pos_int, "polynomial degree"),
        "max_depth": ("10", _pos_int, "forest depth limit"),
        "n_estimators": (None, _pos_int, "forest size (default 800 cutoff, 1100 width)"),
        "mlp_preset": ("bragg", _choice("bragg", "sonic"), "MLP optimiser settings"),
        "epochs": (None, _nonneg_int, "override the preset epoch count"),
        "test_frac": ("0.2", _fraction, "test fraction"),
        "val_frac": ("0.2", _fraction, "validation fraction of the remainder"),
    },
    "tune": {
        "data": (None, _text, "dataset CSV"),
        "target": ("cutoff", _choice(*TARGETS), "regression target"),
        "depth_grid": ("2,4,6,8,10", _int_list, "depths to try"),
        "estimator_grid": ("10,50,100", _int_list, "tree counts to try"),
        "folds": ("5", _pos_int, "cross-validation folds"),
        "test_frac": ("0.2", _fraction, "held-out test fraction (excluded from tuning)"),
        "val_frac": ("0.2", _fraction, "validation fraction of the remainder"),
    },
    "eval": {
        "model_file": (None, _text, "saved model JSON"),
        "data": (None, _text, "dataset CSV (default: the one recorded in the model)"),
        "split": ("test", _choice("train", "validation", "test"), "split to score"),
    },
    "predict": {
        "model_file": (None, _text, "saved model JSON"),
        "ratios": (None, _ratio_rows, "E,rho,h rows separated by ';'"),
    },
}

REQUIRED = {
    "band": ("ratios",),
    "qoi": ("ratios",),
    "dataset import": ("csv",),
    "train": ("data",),
    "tune": ("data",),
    "eval": ("model_file",),
    "predict": ("model_file", "ratios"),
}

FOREST_TREES = {"cutoff": 800, "width": 1100}
MLP_PRESETS = {
    ("bragg", "cutoff"): BRAGG_CUTOFF_CONFIG,
    ("bragg", "width"): BRAGG_WIDTH_CONFIG,
    ("sonic", "cutoff"): SONIC_CUTOFF_CONFIG,
    ("sonic", "width"): SONIC_WIDTH_CONFIG,
}


def read_config_file(path):
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("config", f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(command, file_values, cli_values):
    """Merge defaults, config-file values and command-line values, then convert."""
    table = {**GLOBAL_OPTIONS, **COMMAND_OPTIONS[command]}
    known = set(GLOBAL_OPTIONS) | {"jobs"} | {k for t in COMMAND_OPTIONS.values() for k in t}
    for key in file_values:
        if key not in known:
            raise ConfigError(key, "unknown configuration key")
    raw = {k: spec[0] for k, spec in table.items()}
    raw.update({k: v for k, v in file_values.items() if k in table})
    raw.update({k: v for k, v in cli_values.items() if k in table and v is not None})
    for key in REQUIRED.get(command, ()):
        if raw.get(key) is None:
            raise ConfigError(key, "is required")
    resolved = {k: (None if v is None else table[k][1](k, v)) for k, v in raw.items()}
    return resolved, {k: v for k, v in raw.items() if v is not None}


def echo_config(command, raw, out_dir):
    """Resolved settings in config-file form; the worker count is left out."""
    lines = [f"# metashap {__version__} {command}"]
    lines += [f"{k} = {raw[k]}" for k in sorted(raw)]
    text = "\n".join(lines) + "\n"
    sys.stderr.write(text)
    (out_dir / "resolved_config.txt").write_text(text, encoding="utf-8")


# Commands ------------------------------------------------------------------


def cmd_band(cfg, out, jobs):
    cell = ParameterRatios(*cfg["ratios"]).to_cell()
    report = find_band_gaps(cell)
    omega, rhs = band_diagram(cell, cfg["omega_max"], cfg["samples"])
    write_band_csv(out / "band.csv", omega, rhs)
    write_gap_json(out / "gaps.json", report)
    print(json.dumps(report.to_dict()))


def cmd_qoi(cfg, out, jobs):
    report = DispersionEvaluator()(cfg["ratios"])
    data = {"ratios": list(cfg["ratios"]), **report.to_dict()}
    (out / "qoi.json").write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(data))


def _format_table(result, modified, game):
    lines = []
    if modified:
        lines.append("modified payoffs:")
        for mask in range(1, 1 << game.n):
            lines.append(f"  {''.join(map(str, game.members(mask))):>12s}  {game.payoffs[mask]:g}")
    pct = result.dominance_pct
    lines.append(f"{'player':>8s} {'shapley':>12s} {'dominance %':>12s}")
    for i, p in enumerate(result.players):
        share = "-" if pct is None else f"{pct[i]:.2f}"
        lines.append(f"{str(p):>8s} {result.values[i]:12.4f} {share:>12s}")
    lines.append(f"{'total':>8s} {result.total:12.4f}")
    return "\n".join(lines)


def cmd_shapley(cfg, out, jobs):
    if (cfg["demo"] is None) == (cfg["game"] is None):
        raise ConfigError("demo", "give exactly one of demo or game")
    game = DEMO_GAMES[cfg["demo"]] if cfg["demo"] else load_game(cfg["game"])
    if cfg["modify"]:
        game = monotone_modify(game)
    result = shapley_values(game, cfg["tie_tol"])
    data = result.to_dict()
    if cfg["modify"]:
        data["modified_game"] = game.to_dict()
    (out / "shapley.json").write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    if cfg["format"] == "table":
        print(_format_table(result, cfg["modify"], game))
    else:
        print(json.dumps(data, indent=2))


def _sweep_spec(cfg, mode):
    if mode == "sonic":
        if cfg["lookup"] is None:
            raise ConfigError("lookup", "sonic mode needs a lookup table")
        evaluate = LookupEvaluator(import_csv(cfg["lookup"]))
        default_axes = evaluate.axes()
        base = cfg["base"] or SONIC_BASE
    else:
        evaluate = DispersionEvaluator()
        default_axes = tuple(make_axis(lo, hi, 5, sc) for lo, hi, sc in BRAGG_RANGES)
        base = cfg["base"] or BRAGG_BASE
    axes = tuple(
        cfg[key] if cfg[key] is not None else default
        for key, default in zip(("e_axis", "rho_axis", "h_axis"), default_axes)
    )
    return SweepSpec(axes, base, cfg["direction"], cfg["qoi"]), evaluate


def cmd_dominance(cfg, out, jobs):
    mode = cfg["mode"]
    if mode == "continuous":
        default = make_axis(0.0, 10.0, 101)
        cmap = continuous_map(
            x1_axis=cfg["x1_axis"] or default,
            x2_axis=cfg["x2_axis"] or cfg["x1_axis"] or default,
            tie_tol=cfg["tie_tol"],
        )
        write_continuous_csv(out / "dominance.csv", cmap)
        counts = {k: int(v) for k, v in zip(*np.unique(cmap.labels.astype(str), return_counts=True))}
    else:
        spec, evaluate = _sweep_spec(cfg, mode)
        dmap = dominance_map(spec, evaluate, jobs=jobs, tie_tol=cfg["tie_tol"])
        write_map_csv(out / "dominance.csv", dmap)
        if cfg["cells_json"]:
            cells = {"players": list(PLAYERS), "base": list(spec.base),
                     "direction": spec.direction, "qoi": spec.qoi,
                     "cells": [cell_to_dict(c) for c in dmap.cells]}
            (out / "cells.json").write_text(json.dumps(cells, indent=1) + "\n", encoding="utf-8")
        labels = [c.label_str() for c in dmap.cells]
        counts = {k: labels.count(k) for k in sorted(set(labels))}
    print(json.dumps({"mode": mode, "label_counts": counts}))


def cmd_dataset_gen(cfg, out, jobs):
    ds = generate_bragg(counts=cfg["counts"], jobs=jobs)
    save_dataset(out / "dataset.csv", ds)
    print(json.dumps({"rows": len(ds), "excluded_count": ds.provenance["excluded_count"]}))


def cmd_dataset_import(cfg, out, jobs):
    ds = import_csv(cfg["csv"])
    save_dataset(out / "dataset.csv", ds)
    print(json.dumps({"rows": len(ds), "labelled": int(len(ds.labelled))}))


def _split_dataset(path, seed, test_frac, val_frac):
    return split(import_csv(path), test_frac, val_frac, seed)


def _write_metrics(path, reports):
    path.write_text(json.dumps(reports, indent=2) + "\n", encoding="utf-8")


def cmd_train(cfg, out, jobs):
    seed = cfg["seed"]
    ds = _split_dataset(cfg["data"], seed, cfg["test_frac"], cfg["val_frac"])
    j = TARGETS.index(cfg["target"])
    (Xtr, Ytr), (Xv, Yv) = ds.subset("train"), ds.subset("validation")
    kind = cfg["model"]
    if kind == "poly":
        model = fit_poly_linear(Xtr, Ytr[:, j], cfg["degree"])
    elif kind == "forest":
        n_trees = cfg["n_estimators"] or FOREST_TREES[cfg["target"]]
        model = fit_forest(Xtr, Ytr[:, j], cfg["max_depth"], n_trees, master_seed=seed, jobs=jobs)
    else:
        config = MLP_PRESETS[(cfg["mlp_preset"], cfg["target"])]
        if cfg["epochs"] is not None:
            config = with_epochs(config, cfg["epochs"])
        model = fit_mlp(Xtr, Ytr[:, j], Xv, Yv[:, j], replace(config, seed=seed))
        with open(out / "loss_history.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_mse", "validation_mse"])
            for epoch, (a, b) in enumerate(zip(model.history["train"], model.history["validation"]), 1):
                writer.writerow([epoch, repr(a), repr(b)])
    meta = {
        "model": kind,
        "target": cfg["target"],
        "data": str(cfg["data"]),
        "split": {"seed": seed, "test_frac": cfg["test_frac"], "val_frac": cfg["val_frac"]},
    }
    save_model(out / "model.json", model, meta)
    reports = []
    for name in ("train", "validation", "test"):
        X, Y = ds.subset(name)
        reports.append(metrics_report(kind, cfg["target"], name, evaluate(model, X, Y[:, j])))
    _write_metrics(out / "metrics.json", reports)
    print(json.dumps(reports[-1]))


def cmd_tune(cfg, out, jobs):
    ds = _split_dataset(cfg["data"], cfg["seed"], cfg["test_frac"], cfg["val_frac"])
    j = TARGETS.index(cfg["target"])
    idx = np.sort(np.concatenate([ds.split_.train, ds.split_.validation]))
    result = tune_forest(
        ds.features[idx], ds.targets[idx, j], cfg["depth_grid"], cfg["estimator_grid"],
        folds=cfg["folds"], master_seed=cfg["seed"], jobs=jobs,
    )
    (out / "tune.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")
    for name, header, curve in (
        ("tune_depth.csv", "max_depth", result.depth_curve),
        ("tune_estimators.csv", "n_estimators", result.estimator_curve),
    ):
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([header, "cv_rmse"])
            writer.writerows([x, repr(r)] for x, r in curve)
    print(json.dumps({"best_max_depth": result.best_depth,
                      "best_n_estimators": result.best_n_estimators}))


def cmd_eval(cfg, out, jobs):
    model, meta = load_model(cfg["model_file"])
    try:
        target, sp = meta["target"], meta["split"]
        data = cfg["data"] or meta["data"]
        ds = _split_dataset(data, sp["seed"], sp["test_frac"], sp["val_frac"])
    except KeyError as exc:
        raise FormatError(f"model metadata lacks {exc}") from None
    X, Y = ds.subset(cfg["split"])
    report = metrics_report(meta.get("model"), target, cfg["split"],
                            evaluate(model, X, Y[:, TARGETS.index(target)]))
    _write_metrics(out / "eval.json", report)
    print(json.dumps(report))


def cmd_predict(cfg, out, jobs):
    model, _ = load_model(cfg["model_file"])
    values = model.predict(np.array(cfg["ratios"], dtype=float))
    for v in values:
        print(repr(float(v)))


COMMANDS = {
    "band": cmd_band,
    "qoi": cmd_qoi,
    "shapley": cmd_shapley,
    "dominance": cmd_dominance,
    "dataset gen": cmd_dataset_gen,
    "dataset import": cmd_dataset_import,
    "train": cmd_train,
    "tune": cmd_tune,
    "eval": cmd_eval,
    "predict": cmd_predict,
}


# Argument parsing ------------------------------------------------------------


def _global_flags():
    parent = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    parent.add_argument("--config", help="key = value settings file")
    parent.add_argument("--seed", help=GLOBAL_OPTIONS["seed"][2])
    parent.add_argument("--jobs", help="worker processes (outputs do not depend on it)")
    parent.add_argument("--out", help=GLOBAL_OPTIONS["out"][2])
    return parent


def _add_options(parser, command):
    for key, (default, convert, help_text) in COMMAND_OPTIONS[command].items():
        flag = "--" + key.replace("_", "-")
        if convert is _bool:
            parser.add_argument(flag, dest=key, nargs="?", const="true", default=None, help=help_text)
        else:
            parser.add_argument(flag, dest=key, default=None, help=help_text)


def build_parser():
    parent = _global_flags()
    parser = argparse.ArgumentParser(prog="metashap", parents=[parent],
                                     description="Band-gap solver, Shapley dominance maps and surrogate models.")
    parser.add_argument("--version", action="version", version=f"metashap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in ("band", "qoi", "shapley", "dominance", "train", "tune", "eval", "predict"):
        _add_options(sub.add_parser(command, parents=[parent]), command)
    ds = sub.add_parser("dataset", parents=[parent])
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    for name in ("gen", "import"):
        _add_options(ds_sub.add_parser(name, parents=[parent]), f"dataset {name}")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.command if args.command != "dataset" else f"dataset {args.dataset_command}"
    cli_values = {k: v for k, v in vars(args).items() if k not in ("command", "dataset_command", "config")}
    try:
        file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
        jobs_text = cli_values.pop("jobs", None) or file_values.get("jobs", "1")
        jobs = _pos_int("jobs", jobs_text)
        cfg, raw = resolve(command, file_values, cli_values)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        echo_config(command, raw, out)
    except DomainError as exc:
        parser.print_usage(sys.stderr)
        print(f"metashap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"metashap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        COMMANDS[command](cfg, out, jobs)
    except DomainError as exc:
        print(f"metashap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, RuntimeError, KeyError, OSError, TrainingDiverged) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"metashap: {command} failed: {message}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
