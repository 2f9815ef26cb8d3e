"""Global feature redundancy: squared cosine similarity of centered features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureMatrix


@dataclass(frozen=True)
class RedundancyMatrix:
    A: np.ndarray
    constant_feature_flags: np.ndarray


def build_redundancy(X) -> RedundancyMatrix:
    """``A_ij = (f_i . f_j / (|f_i| |f_j|))**2`` with ``f_i`` the centered feature row.

    Features whose centered norm vanishes get an all-zero row and column and
    are flagged instead of producing NaN.
    """
    V = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    if V.shape[1] < 2:
        raise ValueError("redundancy needs at least two samples")
    F = V - V.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(F, axis=1)
    scale = np.abs(V).max(axis=1) * np.sqrt(V.shape[1])
    constant = norms <= 1e-12 * np.maximum(scale, 1e-300)
    unit = np.zeros_like(F)
    unit[~constant] = F[~constant] / norms[~constant, None]
    O = unit @ unit.T
    A = np.clip(O * O, 0.0, 1.0)
    # mirror the upper triangle so A is exactly symmetric
    A = np.triu(A, 1)
    A = A + A.T
    A[np.diag_indices_from(A)] = np.where(constant, 0.0, 1.0)
    A.setflags(write=False)
    constant.setflags(write=False)
    return RedundancyMatrix(A, constant)
