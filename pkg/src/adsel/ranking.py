"""Row-norm feature ranking and budgeted selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from numbers import Integral

import numpy as np


@dataclass(frozen=True)
class FeatureRanking:
    order: np.ndarray
    scores: np.ndarray

    def to_dict(self):
        return {"order": [int(i) for i in self.order], "scores": [float(s) for s in self.scores]}


def rank_features(W) -> FeatureRanking:
    """Sort features by the Euclidean norm of their row in W, largest first, ties by index."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    scores = np.sqrt(np.einsum("ij,ij->i", W, W))
    order = np.argsort(-scores, kind="stable")
    return FeatureRanking(order, scores)


def budget_size(budget, d):
    """Number of features a budget selects: integers are counts, floats fractions (rounded up)."""
    if isinstance(budget, Integral) and not isinstance(budget, bool):
        m = int(budget)
        if not 1 <= m <= d:
            raise ValueError(f"feature count must be in [1, {d}], got {m}")
        return m
    frac = float(budget)
    if not 0 < frac <= 1:
        raise ValueError(f"feature fraction must be in (0, 1], got {frac}")
    # guard against 0.1 * 30 = 3.0000000000000004
    return max(1, math.ceil(frac * d - 1e-9))


def select_top(r: FeatureRanking, budget) -> np.ndarray:
    return r.order[: budget_size(budget, len(r.order))].copy()
