"""ML-KNN: Bayesian k-nearest-neighbor multi-label classifier.

Neighbors are found by Euclidean distance, ties broken by ascending training
index; a training sample never counts itself as a neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import Dataset


@dataclass(frozen=True)
class MLKnnModel:
    k_neighbors: int
    smoothing: float
    priors: np.ndarray  # P(H_j), length n_labels
    cond_pos: np.ndarray  # P(C = c | H_j), n_labels x (k+1)
    cond_neg: np.ndarray  # P(C = c | not H_j)
    train_features: np.ndarray  # n_train x f, one sample per row
    train_labels: np.ndarray
    selected: np.ndarray = None


@dataclass(frozen=True)
class PredictionResult:
    binary: np.ndarray
    confidence: np.ndarray


def fit_arrays(features, labels, k=10, s=1.0, selected=None) -> MLKnnModel:
    """Fit on a sample-major feature array (n x f) and a binary label array (n x k)."""
    Xtr = np.ascontiguousarray(features, dtype=np.float64)
    Ytr = np.asarray(labels, dtype=np.float64)
    n = Xtr.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n_train (k={k}, n_train={n})")
    priors = (s + Ytr.sum(axis=0)) / (2 * s + n)

    D = _kernels.sq_distances(Xtr, Xtr)
    idx = _kernels.knn_indices(D, k, exclude_self=True)
    counts = _kernels.neighbor_counts(idx, Ytr)  # n x labels

    n_labels = Ytr.shape[1]
    pos = np.zeros((n_labels, k + 1))
    neg = np.zeros((n_labels, k + 1))
    for j in range(n_labels):
        rel = Ytr[:, j] == 1
        pos[j] = np.bincount(counts[rel, j], minlength=k + 1)
        neg[j] = np.bincount(counts[~rel, j], minlength=k + 1)
    cond_pos = (s + pos) / (s * (k + 1) + pos.sum(axis=1, keepdims=True))
    cond_neg = (s + neg) / (s * (k + 1) + neg.sum(axis=1, keepdims=True))
    return MLKnnModel(k, float(s), priors, cond_pos, cond_neg, Xtr, Ytr,
                      None if selected is None else np.asarray(selected))


def mlknn_fit(train: Dataset, selected, k=10, s=1.0, use_masked_labels=False) -> MLKnnModel:
    """Fit on the selected feature rows of ``train``.

    Ground-truth labels are used unless ``use_masked_labels`` is set, in
    which case the observed (masked) labels are used as they are.
    """
    selected = np.asarray(selected, dtype=np.int64)
    labels = train.labels if use_masked_labels else train.full_labels()
    return fit_arrays(train.X[selected].T, labels, k, s, selected)


def mlknn_predict(model: MLKnnModel, test_features) -> PredictionResult:
    """Predict for a sample-major test array with the model's feature columns."""
    Xte = np.atleast_2d(np.asarray(test_features, dtype=np.float64))
    if Xte.shape[1] != model.train_features.shape[1]:
        raise ValueError(
            f"test data has {Xte.shape[1]} features, model expects {model.train_features.shape[1]}"
        )
    D = _kernels.sq_distances(Xte, model.train_features)
    idx = _kernels.knn_indices(D, model.k_neighbors)
    counts = _kernels.neighbor_counts(idx, model.train_labels)
    cols = np.arange(counts.shape[1])
    p1 = model.priors * model.cond_pos[cols, counts]
    p0 = (1 - model.priors) * model.cond_neg[cols, counts]
    conf = p1 / (p1 + p0)
    return PredictionResult((p1 >= p0).astype(np.float64), conf)


def predict_dataset(model: MLKnnModel, test: Dataset) -> PredictionResult:
    return mlknn_predict(model, test.X[model.selected].T)
