"""Command-line entry point: ``adsel {fit,select,experiment,sweep,friedman,simulate-missing}``.

Exit codes: 0 success, 2 usage or validation error, 1 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    ORIENTATIONS,
    ROWS_ARE_SAMPLES,
    CsvParseError,
    Dataset,
    load_csv_matrix,
    load_features,
    load_labels,
    normalize_features,
    save_csv_matrix,
    validate_dataset,
)
from .harness import (
    PARAM_NAMES,
    ExperimentConfig,
    binarize_labels,
    run_experiment,
    sensitivity_sweep,
    simulate_missing,
    tuned_experiment,
)
from .metrics import METRIC_NAMES, SHORT_NAMES, friedman_test
from .ranking import FeatureRanking, rank_features, select_top
from .solver import ABLATIONS, Hyperparams, fit

log = logging.getLogger("adsel")


class UsageError(Exception):
    """Bad input; reported with exit status 2."""


# ------------------------------------------------------------------ helpers

def _fmt(v):
    # shortest string that parses back to the same double
    return repr(float(v))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) if isinstance(row[c], (float, np.floating)) else row[c] for c in columns])


def load_config(args):
    """Flat JSON config merged with command-line overrides (flags win)."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
    overrides = {
        "seed": getattr(args, "seed", None),
        "max_iter": getattr(args, "max_iter", None),
        "tol": getattr(args, "tol", None),
        "ablation": getattr(args, "ablation", None),
        "budget": getattr(args, "budget", None),
        "n_repeats": getattr(args, "repeats", None),
        "missing_ratios": getattr(args, "ratios", None),
        "q": getattr(args, "q", None),
        "normalize": getattr(args, "normalize", None),
        "tune_per_ratio": getattr(args, "tune_per_ratio", None) or None,
    }
    for name in PARAM_NAMES:
        overrides[name] = getattr(args, f"w_{name}", None)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _parse_budget(value):
    try:
        if "." in value or "e" in value.lower():
            return float(value)
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid budget {value!r}") from None


def _parse_ratios(value):
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid ratio list {value!r}") from None


def _parse_budget_value(value):
    return _parse_budget(value) if isinstance(value, str) else value


def load_dataset(args, cfg):
    """Read features, labels, optional mask and groups; normalize; validate."""
    inputs = {}
    orientation = cfg.get("features_orientation", args.orientation)
    fm = load_features(args.features, orientation)
    inputs["features"] = args.features
    Y = load_labels(args.labels)
    inputs["labels"] = args.labels
    if args.ratings or cfg.get("ratings"):
        Y = binarize_labels(Y, float(cfg.get("binarization_threshold", 5.0)))
    mask = None
    hidden = None
    if getattr(args, "mask", None):
        mask = load_labels(args.mask)
        inputs["mask"] = args.mask
        if mask.shape == Y.shape:
            # the label file is treated as ground truth wherever it has values
            hidden = Y
            Y = Y * mask
    groups = None
    if getattr(args, "groups", None):
        with open(args.groups, newline="", encoding="utf-8") as fh:
            cells = [r[0].strip() for r in csv.reader(fh) if r and r[0].strip()]
        groups = np.array(cells[1:] if len(cells) == fm.values.shape[1] + 1 else cells, dtype=object)
        inputs["groups"] = args.groups
    fm = normalize_features(fm, cfg.get("normalize", "zscore"))
    ds = Dataset(fm, Y, mask, hidden, groups)
    problems = validate_dataset(ds)
    if problems:
        raise UsageError("invalid dataset:\n  " + "\n  ".join(problems))
    if fm.constant_rows is not None and fm.constant_rows.any():
        log.warning("%d constant feature(s) flagged: %s", int(fm.constant_rows.sum()),
                    np.flatnonzero(fm.constant_rows).tolist())
    return ds, inputs


def write_manifest(out, command, cfg, inputs, outputs, started, extra=None):
    canon = json.dumps(cfg, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": cfg,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in inputs.items()},
        "outputs": sorted(str(p) for p in outputs),
        "started": started,
        "finished": _now(),
    }
    if extra:
        manifest.update(extra)
    _write_json(Path(out) / "manifest.json", manifest)


def _hyperparams(cfg):
    try:
        return Hyperparams.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad hyperparameters: {exc}") from exc


def _experiment_config(cfg):
    try:
        kw = dict(cfg)
        if "budget" in kw:
            kw["budget"] = _parse_budget_value(kw["budget"])
        return ExperimentConfig.from_dict(kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad experiment config: {exc}") from exc


# ---------------------------------------------------------------- commands

def cmd_fit(args):
    started = _now()
    cfg = load_config(args)
    hp = _hyperparams(cfg)
    ds, inputs = load_dataset(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    state = fit(ds, hp)
    ranking = rank_features(state.W)
    rank_obj = ranking.to_dict()
    if ds.features.feature_names is not None:
        rank_obj["names"] = [ds.features.feature_names[i] for i in ranking.order]
    _write_json(out / "ranking.json", rank_obj)

    terms = list(state.term_trace[0]) if state.term_trace else []
    rows = [dict(iteration=i + 1, objective=o, **t)
            for i, (o, t) in enumerate(zip(state.objective_trace, state.term_trace))]
    _write_rows(out / "trace.csv", rows, ["iteration", "objective", *terms])

    summary = {
        "n_features": ds.n_features,
        "n_samples": ds.n_samples,
        "n_labels": ds.n_labels,
        "iterations": state.iter,
        "converged": state.converged,
        "initial_objective": state.initial_objective,
        "final_objective": state.objective_trace[-1],
        "final_terms": state.term_trace[-1],
        "bias": [float(v) for v in state.b],
        "hyperparams": hp.to_dict(),
        "min_Q": float(state.Q.min()),
        "min_U": float(state.U.min()),
    }
    _write_json(out / "model_summary.json", summary)
    outputs = [out / "ranking.json", out / "trace.csv", out / "model_summary.json"]
    write_manifest(out, "fit", cfg, inputs, outputs, started, {"ablation": hp.ablation})
    print(f"fit: {state.iter} iterations, objective {state.objective_trace[-1]:.6g}; wrote {out}")
    return 0


def cmd_select(args):
    started = _now()
    cfg = load_config(args)
    orientation = cfg.get("features_orientation", args.orientation)
    m = load_csv_matrix(args.features, orientation)
    X = m.values
    try:
        with open(args.ranking, encoding="utf-8") as fh:
            r = json.load(fh)
        order = np.asarray(r["order"], dtype=np.int64)
        scores = np.asarray(r.get("scores", np.zeros(len(order))), dtype=np.float64)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"ranking file {args.ranking}: {exc}") from exc
    d = X.shape[0]
    if sorted(order.tolist()) != list(range(d)):
        raise UsageError(f"ranking is not a permutation of the {d} features")
    budget = _parse_budget_value(cfg.get("budget", 0.1))
    try:
        chosen = select_top(FeatureRanking(order, scores), budget)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "selected.json", [int(i) for i in chosen])
    sub = X[chosen]
    names = None
    if m.names is not None and orientation == ROWS_ARE_SAMPLES:
        names = [m.names[i] for i in chosen]
    if orientation == ROWS_ARE_SAMPLES:
        save_csv_matrix(out / "selected_features.csv", sub.T, names)
    else:
        save_csv_matrix(out / "selected_features.csv", sub, m.names)
    outputs = [out / "selected.json", out / "selected_features.csv"]
    write_manifest(out, "select", cfg, {"features": args.features, "ranking": args.ranking}, outputs, started)
    print(json.dumps([int(i) for i in chosen]))
    return 0


def _summary_rows(records):
    rows = []
    for rec in records:
        for m in METRIC_NAMES:
            rows.append({"ratio": rec.ratio, "metric": SHORT_NAMES[m], "mean": rec.means[m],
                         "std": rec.stds[m], "n_repeats": rec.n_ok})
    return rows


def cmd_experiment(args):
    started = _now()
    cfg = load_config(args)
    hp = _hyperparams(cfg)
    ecfg = _experiment_config(cfg)
    ds, inputs = load_dataset(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    if args.grid:
        records, grid_rows = tuned_experiment(ds, ecfg, hp)
        cols = ["ratio"] + [p for p in PARAM_NAMES if p in grid_rows[0]] + ["score"]
        _write_rows(out / "grid.csv", grid_rows, cols)
        outputs.append(out / "grid.csv")
    else:
        records = run_experiment(ds, ecfg, hp)
    _write_rows(out / "summary.csv", _summary_rows(records), ["ratio", "metric", "mean", "std", "n_repeats"])

    plot_rows = []
    for rec in records:
        row = {"ratio": rec.ratio}
        for m in METRIC_NAMES:
            row[SHORT_NAMES[m]] = rec.means[m]
            row[SHORT_NAMES[m] + "_std"] = rec.stds[m]
        plot_rows.append(row)
    plot_cols = ["ratio"] + [c for m in METRIC_NAMES for c in (SHORT_NAMES[m], SHORT_NAMES[m] + "_std")]
    _write_rows(out / "plot_data.csv", plot_rows, plot_cols)

    rep_rows = []
    for rec in records:
        for i, r in enumerate(rec.reports):
            row = {"ratio": rec.ratio, "repeat": i, "status": "ok" if r is not None else "failed"}
            for m in METRIC_NAMES:
                row[SHORT_NAMES[m]] = getattr(r, m) if r is not None else ""
            row["iterations"] = len(rec.traces[i])
            row["final_objective"] = rec.traces[i][-1] if rec.traces[i] else ""
            rep_rows.append(row)
    _write_rows(out / "repeats.csv", rep_rows,
                ["ratio", "repeat", "status", "HL", "RL", "CV", "AP", "iterations", "final_objective"])

    failures = [{"ratio": rec.ratio, "repeat": r, "error": e} for rec in records for r, e in rec.failures]
    outputs += [out / "summary.csv", out / "plot_data.csv", out / "repeats.csv"]
    write_manifest(out, "experiment", cfg, inputs, outputs, started, {
        "ablation": ecfg.ablation,
        "hyperparams": records[0].config["hyperparams"],
        "hyperparams_by_ratio": {_fmt(rec.ratio): rec.config["hyperparams"] for rec in records},
        "experiment": ecfg.to_dict(),
        "failures": failures,
        "wall_clock_seconds": [rec.wall_clock for rec in records],
    })
    for rec in records:
        line = "  ".join(f"{SHORT_NAMES[m]}={rec.means[m]:.4f}" for m in METRIC_NAMES)
        print(f"ratio {rec.ratio:.2f}: {line}  (n={rec.n_ok})")
    return 0


def cmd_sweep(args):
    started = _now()
    cfg = load_config(args)
    hp = _hyperparams(cfg)
    ecfg = _experiment_config(cfg)
    ds, inputs = load_dataset(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values = [float(v) for v in args.values.split(",")] if args.values else None
    try:
        rows = sensitivity_sweep(ds, ecfg, args.param, values, hp)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cols = ["parameter", "value", "ratio", *PARAM_NAMES,
            *(f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "std")), "n_repeats"]
    path = out / f"sweep_{rows[0]['parameter']}.csv"
    _write_rows(path, rows, cols)
    write_manifest(out, "sweep", cfg, inputs, [path], started, {"ablation": ecfg.ablation})
    print(f"wrote {path}")
    return 0


def load_score_table(path):
    """Methods x settings table; an optional header row and leading name column are allowed."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise UsageError(f"{path}: empty score table")

    def numeric(c):
        try:
            float(c)
            return True
        except ValueError:
            return False

    has_names = all(not numeric(r[0]) for r in rows[1:]) if len(rows) > 1 else False
    body = rows[1:] if not all(numeric(c) for c in rows[0][1 if has_names else 0:]) else rows
    names, values = [], []
    width = None
    for i, r in enumerate(body):
        cells = r[1:] if has_names else r
        if width is None:
            width = len(cells)
        if len(cells) != width:
            raise UsageError(f"{path}: ragged row {i + 1}")
        try:
            values.append([float(c) for c in cells])
        except ValueError as exc:
            raise UsageError(f"{path}: {exc}") from None
        names.append(r[0] if has_names else f"method_{i}")
    T = np.array(values)
    if T.ndim != 2 or T.shape[0] < 2 or T.shape[1] < 2 or not np.all(np.isfinite(T)):
        raise UsageError(f"{path}: need a finite table with >= 2 methods and >= 2 settings")
    return names, T


def cmd_friedman(args):
    status = 0
    for path in args.table:
        names, T = load_score_table(path)
        res = friedman_test(T, args.higher_is_better, args.critical)
        decision = "reject" if res.reject else "accept"
        print(f"{path}: K={res.n_methods} N={res.n_settings} chi2_F={res.chi2:.6g} "
              f"F_F={res.ff:.6g} critical={args.critical:g} -> {decision} equal performance")
        if args.verbose:
            for name, r in zip(names, res.average_ranks):
                print(f"  {name}: mean rank {r:.4g}")
    return status


def cmd_simulate_missing(args):
    started = _now()
    Y = load_labels(args.labels)
    if args.ratings:
        Y = binarize_labels(Y, args.threshold)
    try:
        observed, P, hidden = simulate_missing(Y, args.ratio, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, M in (("labels_observed.csv", observed), ("mask.csv", P), ("labels_hidden.csv", hidden)):
        save_csv_matrix(out / name, M)
    outputs = [out / n for n in ("labels_observed.csv", "mask.csv", "labels_hidden.csv")]
    cfg = {"ratio": args.ratio, "seed": args.seed}
    write_manifest(out, "simulate-missing", cfg, {"labels": args.labels}, outputs, started)
    print(f"masked {int((P == 0).sum())} of {P.size} label entries; wrote {out}")
    return 0


# ------------------------------------------------------------------ parser

def _dataset_flags(p, labels=True):
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--orientation", choices=ORIENTATIONS, default=ROWS_ARE_SAMPLES,
                   help="layout of the feature CSV (default: one sample per row)")
    if labels:
        p.add_argument("--labels", required=True, help="binary label CSV, one sample per row")
        p.add_argument("--ratings", action="store_true", help="labels are raw ratings; binarize at the threshold")
        p.add_argument("--mask", help="observation mask CSV (1 = observed)")
        p.add_argument("--groups", help="single-column CSV of participant ids for grouped splits")
    p.add_argument("--config", help="flat JSON config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--normalize", choices=("zscore", "none"))


def _solver_flags(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--q", type=int, help="graph neighbor count")
    p.add_argument("--ablation", choices=ABLATIONS)
    for name in PARAM_NAMES:
        p.add_argument(f"--{name}", dest=f"w_{name}", type=float, metavar="W")


def build_parser():
    parser = argparse.ArgumentParser(prog="adsel", description="Feature selection for incomplete multi-dimensional labels.")
    parser.add_argument("--version", action="version", version=f"adsel {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit ADSEL and write the feature ranking")
    _dataset_flags(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="apply a feature budget to a ranking")
    _dataset_flags(p, labels=False)
    p.add_argument("--ranking", required=True, help="ranking.json from 'fit' or an external method")
    p.add_argument("--budget", type=_parse_budget, help="fraction (0.1) or count (10)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("experiment", help="run the masked-label evaluation protocol")
    _dataset_flags(p)
    _solver_flags(p)
    p.add_argument("--ratios", type=_parse_ratios, help="comma-separated missing ratios")
    p.add_argument("--repeats", type=int)
    p.add_argument("--budget", type=_parse_budget)
    p.add_argument("--grid", action="store_true", help="tune the trade-off weights first")
    p.add_argument("--tune-per-ratio", action="store_true", help="with --grid, tune separately at every ratio")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="sensitivity of one trade-off weight")
    _dataset_flags(p)
    _solver_flags(p)
    p.add_argument("--param", required=True, choices=PARAM_NAMES)
    p.add_argument("--values", help="comma-separated values (default: the configured grid)")
    p.add_argument("--ratios", type=_parse_ratios)
    p.add_argument("--repeats", type=int)
    p.add_argument("--budget", type=_parse_budget)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("friedman", help="Friedman / Iman-Davenport test on score tables")
    p.add_argument("--table", required=True, action="append", help="methods x settings CSV (repeatable)")
    p.add_argument("--critical", required=True, type=float, help="critical value of F_F")
    p.add_argument("--higher-is-better", action="store_true")
    p.set_defaults(func=cmd_friedman)

    p = sub.add_parser("simulate-missing", help="hide a fraction of labels per dimension")
    p.add_argument("--labels", required=True)
    p.add_argument("--ratio", required=True, type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratings", action="store_true")
    p.add_argument("--threshold", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_missing)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, CsvParseError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"adsel {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"adsel {args.command}: invalid input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"adsel {args.command}: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
