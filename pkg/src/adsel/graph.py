"""q-nearest-neighbor heat-kernel graph over samples and its Laplacian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import FeatureMatrix


@dataclass(frozen=True)
class AffinityGraph:
    S: np.ndarray
    sigma: float
    q: int


@dataclass(frozen=True)
class GraphLaplacian:
    L: np.ndarray
    degree: np.ndarray

    @property
    def G(self):
        return np.diag(self.degree)


def _values(X):
    return X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)


def neighbor_mask(X, q):
    """Boolean n x n matrix, True where j is among the q nearest samples of i or vice versa.

    Returns the mask together with the squared distance matrix.
    """
    samples = _values(X).T
    n = samples.shape[0]
    if not 1 <= q < n:
        raise ValueError(f"q must satisfy 1 <= q < n (q={q}, n={n})")
    D = _kernels.sq_distances(samples, samples)
    np.fill_diagonal(D, 0.0)
    idx = _kernels.knn_indices(D, q, exclude_self=True)
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), q), idx.ravel()] = True
    mask |= mask.T
    np.fill_diagonal(mask, False)
    return mask, D


def build_affinity(X, q=5, sigma="auto") -> AffinityGraph:
    """Heat-kernel affinity ``exp(-||x_i - x_j||^2 / sigma^2)`` on the symmetric q-NN graph.

    ``X`` is d x n (samples are columns). With ``sigma="auto"`` the bandwidth
    is the mean Euclidean distance over retained neighbor pairs (1.0 if all of
    them are zero). The diagonal is 0.
    """
    mask, D = neighbor_mask(X, q)
    if sigma == "auto" or sigma is None:
        iu = np.triu_indices_from(mask, k=1)
        pairs = mask[iu]
        dist = np.sqrt(D[iu][pairs])
        sigma = float(dist.mean()) if dist.size else 1.0
        if sigma <= 0:
            sigma = 1.0
    else:
        sigma = float(sigma)
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
    S = np.where(mask, np.exp(-D / sigma**2), 0.0)
    S = 0.5 * (S + S.T)
    S.setflags(write=False)
    return AffinityGraph(S, sigma, int(q))


def build_laplacian(g) -> GraphLaplacian:
    S = g.S if isinstance(g, AffinityGraph) else np.asarray(g, dtype=np.float64)
    degree = S.sum(axis=1)
    L = np.diag(degree) - S
    L.setflags(write=False)
    degree.setflags(write=False)
    return GraphLaplacian(L, degree)
