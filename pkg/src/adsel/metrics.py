"""Instance-based multi-label metrics and the Friedman / Iman-Davenport test.

Label ranks are pessimistic: the rank of label j in a sample is the number
of labels whose confidence is at least that of j, so tied labels share the
worse rank.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    hamming_loss: float
    ranking_loss: float
    coverage: float
    average_precision: float
    skipped_samples: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


METRIC_NAMES = ("hamming_loss", "ranking_loss", "coverage", "average_precision")
SHORT_NAMES = {"hamming_loss": "HL", "ranking_loss": "RL", "coverage": "CV", "average_precision": "AP"}


def _pair(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def hamming_loss(pred_binary, truth):
    pred, truth = _pair(pred_binary, truth)
    return float(np.mean(pred != truth))


def _label_ranks(conf):
    # rank[i, j] = #{l : conf[i, l] >= conf[i, j]}
    return (conf[:, :, None] <= conf[:, None, :]).sum(axis=2)


def ranking_loss(conf, truth):
    """Fraction of misordered (relevant, irrelevant) pairs; ties count one half."""
    conf, truth = _pair(conf, truth)
    rel = truth == 1
    n_rel = rel.sum(axis=1)
    ok = (n_rel > 0) & (n_rel < truth.shape[1])
    if not ok.any():
        raise UndefinedMetricError("ranking loss needs a sample with both relevant and irrelevant labels")
    c, r = conf[ok], rel[ok]
    # pairs (a relevant, b irrelevant)
    pair = r[:, :, None] & ~r[:, None, :]
    ca, cb = c[:, :, None], c[:, None, :]
    bad = np.where(ca < cb, 1.0, 0.0) + np.where(ca == cb, 0.5, 0.0)
    losses = (bad * pair).sum(axis=(1, 2)) / pair.sum(axis=(1, 2))
    return float(losses.mean())


def coverage(conf, truth):
    """Mean over samples of (worst rank among relevant labels) - 1."""
    conf, truth = _pair(conf, truth)
    rel = truth == 1
    ok = rel.any(axis=1)
    if not ok.any():
        raise UndefinedMetricError("coverage needs a sample with a relevant label")
    ranks = _label_ranks(conf[ok])
    worst = np.where(rel[ok], ranks, 0).max(axis=1)
    return float(np.mean(worst - 1))


def average_precision(conf, truth):
    conf, truth = _pair(conf, truth)
    rel = truth == 1
    ok = rel.any(axis=1)
    if not ok.any():
        raise UndefinedMetricError("average precision needs a sample with a relevant label")
    c, r = conf[ok], rel[ok]
    ranks = _label_ranks(c)
    # relevant labels l ranked at or above j: conf[l] >= conf[j]
    above = ((c[:, None, :] >= c[:, :, None]) & r[:, None, :]).sum(axis=2)
    prec = np.where(r, above / ranks, 0.0)
    return float(np.mean(prec.sum(axis=1) / r.sum(axis=1)))


def evaluate(pred_binary, conf, truth) -> MetricReport:
    """All four metrics. ``skipped_samples`` counts samples dropped by ranking loss."""
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    n_rel = (truth == 1).sum(axis=1)
    skipped = int(np.sum((n_rel == 0) | (n_rel == truth.shape[1])))
    return MetricReport(
        hamming_loss(pred_binary, truth),
        ranking_loss(conf, truth),
        coverage(conf, truth),
        average_precision(conf, truth),
        skipped,
    )


@dataclass(frozen=True)
class FriedmanResult:
    chi2: float
    ff: float
    average_ranks: np.ndarray
    critical_value: float
    reject: bool
    n_methods: int
    n_settings: int


def friedman_test(score_table, higher_is_better=True, critical_value=None) -> FriedmanResult:
    """Friedman chi-square and Iman-Davenport F over a methods x settings table.

    Rank 1 is the best method in a setting; ties get average ranks. Equality
    of methods is rejected iff ``F_F > critical_value``.
    """
    T = np.asarray(score_table, dtype=np.float64)
    if T.ndim != 2 or T.shape[0] < 2 or T.shape[1] < 2:
        raise ValueError("score table needs at least 2 methods and 2 settings")
    if not np.all(np.isfinite(T)):
        raise ValueError("score table contains non-finite values")
    K, N = T.shape
    key = -T if higher_is_better else T
    ranks = np.column_stack([rankdata(key[:, j]) for j in range(N)])
    R = ranks.mean(axis=1)
    chi2 = 12.0 * N / (K * (K + 1)) * (np.sum(R**2) - K * (K + 1) ** 2 / 4.0)
    chi2 = max(chi2, 0.0)
    denom = N * (K - 1) - chi2
    if chi2 == 0:
        ff = 0.0
    elif denom <= 0:
        ff = float("inf")
    else:
        ff = (N - 1) * chi2 / denom
    reject = bool(critical_value is not None and ff > critical_value)
    return FriedmanResult(float(chi2), float(ff), R, critical_value, reject, K, N)
