"""Evaluation protocol: mask labels, split, select features, classify, score, aggregate."""

from __future__ import annotations

import itertools
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .data import Dataset, FeatureMatrix, validate_dataset
from .metrics import METRIC_NAMES, evaluate
from .mlknn import mlknn_fit, predict_dataset
from .ranking import FeatureRanking, rank_features, select_top
from .solver import WEIGHTS, Hyperparams, fit

log = logging.getLogger(__name__)

DECADES = tuple(10.0**e for e in range(-3, 4))
# external names of the trade-off weights, in the order used for grid tuples
PARAM_NAMES = ("lambda", "alpha", "beta", "mu", "delta")
_FIELD = dict(zip(PARAM_NAMES, WEIGHTS))


def _default_grid():
    return {name: list(DECADES) for name in PARAM_NAMES}


@dataclass(frozen=True)
class ExperimentConfig:
    missing_ratios: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    n_repeats: int = 50
    train_fraction: float = 0.7
    budget: object = 0.10
    hyper_grid: dict = field(default_factory=_default_grid)
    binarization_threshold: float = 5.0
    seed: int = 0
    ablation: str = "full"
    mlknn_k: int = 10
    mlknn_s: float = 1.0
    evaluator_masked_labels: bool = False
    grid_repeats: int = 5
    grid_ratio: Optional[float] = None
    tune_per_ratio: bool = False
    n_jobs: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "missing_ratios", tuple(float(r) for r in self.missing_ratios))
        for r in self.missing_ratios:
            if not 0 <= r < 1:
                raise ValueError(f"missing ratio must be in [0, 1), got {r}")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be >= 1")
        unknown = set(self.hyper_grid) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown grid parameters: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        kw = {k: v for k, v in d.items() if k in known}
        if "hyper_grid" in kw:
            kw["hyper_grid"] = {("lambda" if k in ("lam", "lambda_") else k): list(v) for k, v in kw["hyper_grid"].items()}
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        d["missing_ratios"] = list(self.missing_ratios)
        return d


@dataclass
class RunRecord:
    ratio: float
    config: dict
    reports: list  # MetricReport or None per repeat
    failures: list  # (repeat, message)
    means: dict
    stds: dict
    traces: list
    selected: list
    wall_clock: float = 0.0

    @property
    def n_ok(self):
        return sum(r is not None for r in self.reports)


def thread_count(cfg: Optional[ExperimentConfig] = None):
    if cfg is not None and cfg.n_jobs:
        return int(cfg.n_jobs)
    try:
        return max(1, int(os.environ.get("ADSEL_THREADS", "1")))
    except ValueError:
        return 1


def binarize_labels(ratings, threshold=5.0):
    """1 where the rating reaches the threshold (inclusive), else 0."""
    return (np.asarray(ratings, dtype=np.float64) >= threshold).astype(np.float64)


def simulate_missing(Y, ratio, seed):
    """Hide exactly round(ratio * n) entries per label column, chosen uniformly.

    Returns ``(observed, mask, hidden)`` where ``observed`` is zero at hidden
    cells and ``hidden`` is the untouched ground truth.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if not 0 <= ratio < 1:
        raise ValueError(f"missing ratio must be in [0, 1), got {ratio}")
    n, k = Y.shape
    m = int(np.floor(ratio * n + 0.5))
    rng = np.random.default_rng(seed)
    P = np.ones_like(Y)
    for j in range(k):
        P[rng.choice(n, size=m, replace=False), j] = 0.0
    return Y * P, P, Y.copy()


def split_indices(n, train_fraction, rng, groups=None):
    """Random train/test partition; grouped by participant when ``groups`` is given."""
    if groups is None:
        perm = rng.permutation(n)
        n_train = min(n - 1, max(1, int(np.floor(train_fraction * n + 0.5))))
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    ids = np.asarray(groups)
    uniq = sorted(set(ids.tolist()), key=str)
    if len(uniq) < 2:
        raise ValueError("grouped split needs at least two groups")
    perm = rng.permutation(len(uniq))
    n_train = min(len(uniq) - 1, max(1, int(np.floor(train_fraction * len(uniq) + 0.5))))
    train_groups = {uniq[i] for i in perm[:n_train]}
    in_train = np.array([g in train_groups for g in ids.tolist()])
    return np.flatnonzero(in_train), np.flatnonzero(~in_train)


def adsel_selector(train: Dataset, hp: Hyperparams):
    """Default selector: fit ADSEL, rank by row norms. Returns (ranking, objective trace)."""
    state = fit(train, hp)
    return rank_features(state.W), list(state.objective_trace)


def _repeat_seeds(base, repeat):
    ss = np.random.SeedSequence([int(base), int(repeat)])
    split_ss, mask_ss, fit_ss = ss.spawn(3)
    return (np.random.default_rng(split_ss),
            int(mask_ss.generate_state(1)[0]),
            int(fit_ss.generate_state(1)[0]))


def run_repeat(ds: Dataset, ratio, cfg: ExperimentConfig, hp: Hyperparams, repeat, selector=None):
    """One repeat of the protocol. Returns (MetricReport, trace, selected indices)."""
    selector = selector or adsel_selector
    split_rng, mask_seed, fit_seed = _repeat_seeds(cfg.seed, repeat)
    truth = ds.full_labels()
    train_idx, test_idx = split_indices(ds.n_samples, cfg.train_fraction, split_rng, ds.groups)

    Ytr = truth[train_idx]
    observed, P, hidden = simulate_missing(Ytr, ratio, mask_seed)
    Xtr = ds.X[:, train_idx]
    names = ds.features.feature_names
    train = Dataset(FeatureMatrix(Xtr, names), observed, P, hidden)
    test = Dataset(FeatureMatrix(ds.X[:, test_idx], names), truth[test_idx])

    hp_run = replace(hp, seed=fit_seed, ablation=cfg.ablation)
    ranking, trace = selector(train, hp_run)
    selected = select_top(ranking, cfg.budget)
    model = mlknn_fit(train, selected, cfg.mlknn_k, cfg.mlknn_s, cfg.evaluator_masked_labels)
    pred = predict_dataset(model, test)
    return evaluate(pred.binary, pred.confidence, test.labels), trace, selected


def aggregate(reports):
    ok = [r for r in reports if r is not None]
    means, stds = {}, {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in ok], dtype=np.float64)
        means[name] = float(vals.mean()) if vals.size else float("nan")
        stds[name] = float(vals.std()) if vals.size else float("nan")
    return means, stds


def run_protocol(ds: Dataset, ratio, cfg: ExperimentConfig, hp: Optional[Hyperparams] = None,
                 selector=None, n_repeats=None) -> RunRecord:
    """All repeats at one missing ratio. Failing repeats are recorded, not raised."""
    hp = hp or Hyperparams()
    n_repeats = cfg.n_repeats if n_repeats is None else n_repeats
    t0 = time.perf_counter()

    def job(r):
        try:
            return run_repeat(ds, ratio, cfg, hp, r, selector), None
        except Exception as exc:  # keep partial results
            log.warning("repeat %d at ratio %g failed: %s", r, ratio, exc)
            return None, f"{type(exc).__name__}: {exc}"

    workers = min(thread_count(cfg), n_repeats)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(n_repeats)))
    else:
        results = [job(r) for r in range(n_repeats)]

    reports, traces, selected, failures = [], [], [], []
    for r, (res, err) in enumerate(results):
        if res is None:
            reports.append(None)
            traces.append([])
            selected.append([])
            failures.append((r, err))
        else:
            reports.append(res[0])
            traces.append(res[1])
            selected.append([int(i) for i in res[2]])
    means, stds = aggregate(reports)
    snapshot = {"experiment": cfg.to_dict(), "hyperparams": replace(hp, ablation=cfg.ablation).to_dict()}
    return RunRecord(float(ratio), snapshot, reports, failures, means, stds, traces, selected,
                     time.perf_counter() - t0)


def run_experiment(ds: Dataset, cfg: ExperimentConfig, hp: Optional[Hyperparams] = None,
                   selector=None) -> list:
    """One RunRecord per configured missing ratio."""
    problems = validate_dataset(ds)
    if problems:
        raise ValueError("invalid dataset: " + "; ".join(problems))
    return [run_protocol(ds, ratio, cfg, hp, selector) for ratio in cfg.missing_ratios]


def with_params(hp: Hyperparams, values: dict) -> Hyperparams:
    return replace(hp, **{_FIELD[k]: float(v) for k, v in values.items()})


def grid_search(ds: Dataset, cfg: ExperimentConfig, hp: Optional[Hyperparams] = None,
                scorer: Optional[Callable] = None, ratio=None):
    """Exhaustive search over ``cfg.hyper_grid``.

    Each grid point is scored by ``scorer(hp)``, by default the mean average
    precision of ``cfg.grid_repeats`` repeats of the protocol (the same seeds
    for every point). The best point maximizes the score; ties go to the
    lexicographically smallest parameter tuple. Returns ``(best_hp, rows)``.
    """
    hp = hp or Hyperparams()
    grid = {k: list(v) for k, v in cfg.hyper_grid.items() if len(v)}
    if not grid:
        raise ValueError("hyper_grid is empty")
    names = [p for p in PARAM_NAMES if p in grid]
    if ratio is None:
        ratio = cfg.grid_ratio if cfg.grid_ratio is not None else cfg.missing_ratios[0]

    if scorer is None:
        def scorer(h):
            rec = run_protocol(ds, ratio, cfg, h, n_repeats=cfg.grid_repeats)
            return rec.means["average_precision"]

    rows = []
    best = None
    for combo in itertools.product(*(sorted(grid[p]) for p in names)):
        point = dict(zip(names, combo))
        h = with_params(hp, point)
        score = float(scorer(h))
        rows.append({**point, "score": score})
        key = (-score if np.isfinite(score) else np.inf, combo)
        if best is None or key < best[0]:
            best = (key, h)
    return best[1], rows


def tuned_experiment(ds: Dataset, cfg: ExperimentConfig, hp: Optional[Hyperparams] = None):
    """Grid-tune the weights, then run the protocol.

    Tuning happens once (at ``grid_ratio``, default the first ratio) unless
    ``cfg.tune_per_ratio`` is set, in which case every ratio gets its own
    search. Returns ``(records, grid_rows)``; each grid row carries the ratio
    it was scored at.
    """
    problems = validate_dataset(ds)
    if problems:
        raise ValueError("invalid dataset: " + "; ".join(problems))
    hp = hp or Hyperparams()
    records, grid_rows = [], []
    if cfg.tune_per_ratio:
        for ratio in cfg.missing_ratios:
            best, rows = grid_search(ds, cfg, hp, ratio=ratio)
            grid_rows += [{"ratio": float(ratio), **r} for r in rows]
            records.append(run_protocol(ds, ratio, cfg, best))
        return records, grid_rows
    ratio = cfg.grid_ratio if cfg.grid_ratio is not None else cfg.missing_ratios[0]
    best, rows = grid_search(ds, cfg, hp, ratio=ratio)
    grid_rows = [{"ratio": float(ratio), **r} for r in rows]
    return [run_protocol(ds, r, cfg, best) for r in cfg.missing_ratios], grid_rows


def sensitivity_sweep(ds: Dataset, cfg: ExperimentConfig, parameter, values=None,
                      hp: Optional[Hyperparams] = None, ratio=None):
    """Vary one trade-off weight, others fixed; one row of aggregate metrics per value."""
    if parameter in ("lam", "lambda_"):
        parameter = "lambda"
    if parameter not in PARAM_NAMES:
        raise ValueError(f"unknown parameter {parameter!r}; expected one of {PARAM_NAMES}")
    hp = hp or Hyperparams()
    if values is None:
        values = cfg.hyper_grid.get(parameter) or list(DECADES)
    if ratio is None:
        ratio = cfg.missing_ratios[0]
    rows = []
    for v in values:
        h = with_params(hp, {parameter: v})
        rec = run_protocol(ds, ratio, cfg, h)
        row = {"parameter": parameter, "value": float(v), "ratio": float(ratio)}
        row.update({p: float(getattr(h, _FIELD[p])) for p in PARAM_NAMES})
        for m in METRIC_NAMES:
            row[f"{m}_mean"] = rec.means[m]
            row[f"{m}_std"] = rec.stds[m]
        row["n_repeats"] = rec.n_ok
        rows.append(row)
    return rows


def random_selector(seed):
    """Selector that ranks features in a seeded random order (baseline)."""
    def select(train: Dataset, hp: Hyperparams):
        rng = np.random.default_rng([int(seed), int(hp.seed)])
        order = rng.permutation(train.n_features)
        scores = np.empty(train.n_features)
        scores[order] = np.arange(train.n_features, 0, -1, dtype=np.float64)
        return FeatureRanking(order, scores), []
    return select


def fixed_selector(ranking: FeatureRanking):
    """Selector that returns an externally produced ranking unchanged."""
    def select(train: Dataset, hp: Hyperparams):
        return ranking, []
    return select
