"""Loop-heavy kernels with a numba path and a pure-numpy fallback.

Set ``ADSEL_DISABLE_NUMBA=1`` in the environment to force the numpy path.
Both paths return identical neighbor sets (ties broken by ascending index)
and distances that agree to rounding.
"""

import os

import numpy as np
from scipy.spatial.distance import cdist

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

USE_NUMBA = njit is not None and os.environ.get("ADSEL_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


# ---------------------------------------------------------------- numpy path

def _sq_distances_np(A, B):
    return cdist(A, B, "sqeuclidean")


def _knn_np(D, q, exclude_self):
    D = np.array(D, dtype=np.float64, copy=True)
    if exclude_self:
        np.fill_diagonal(D, np.inf)
    # stable sort keeps equal distances in ascending column order
    return np.argsort(D, axis=1, kind="stable")[:, :q].astype(np.int64)


def _neighbor_counts_np(idx, Y):
    return Y[idx].sum(axis=1).astype(np.int64)


# ---------------------------------------------------------------- numba path

if njit is not None:

    @njit(cache=True)
    def _sq_distances_nb(A, B):
        na, nb, f = A.shape[0], B.shape[0], A.shape[1]
        out = np.empty((na, nb))
        for i in range(na):
            for j in range(nb):
                acc = 0.0
                for t in range(f):
                    diff = A[i, t] - B[j, t]
                    acc += diff * diff
                out[i, j] = acc
        return out

    @njit(cache=True)
    def _knn_nb(D, q, exclude_self):
        n, m = D.shape
        out = np.empty((n, q), dtype=np.int64)
        best_d = np.empty(q)
        for i in range(n):
            filled = 0
            for j in range(m):
                if exclude_self and j == i:
                    continue
                d = D[i, j]
                if filled == q and d >= best_d[q - 1]:
                    continue
                # insertion keeps earlier (smaller) indices ahead on ties
                pos = filled if filled < q else q - 1
                while pos > 0 and best_d[pos - 1] > d:
                    if pos < q:
                        best_d[pos] = best_d[pos - 1]
                        out[i, pos] = out[i, pos - 1]
                    pos -= 1
                best_d[pos] = d
                out[i, pos] = j
                if filled < q:
                    filled += 1
        return out

    @njit(cache=True)
    def _neighbor_counts_nb(idx, Y):
        n, q = idx.shape
        k = Y.shape[1]
        out = np.zeros((n, k), dtype=np.int64)
        for i in range(n):
            for t in range(q):
                row = idx[i, t]
                for j in range(k):
                    if Y[row, j] != 0:
                        out[i, j] += 1
        return out


def sq_distances(A, B, use_numba=None):
    """Squared Euclidean distances between the rows of ``A`` and ``B``."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    if _pick(use_numba):
        return _sq_distances_nb(A, B)
    return _sq_distances_np(A, B)


def knn_indices(D, q, exclude_self=False, use_numba=None):
    """Indices of the ``q`` smallest entries per row of ``D``, nearest first."""
    D = np.ascontiguousarray(D, dtype=np.float64)
    if _pick(use_numba):
        return _knn_nb(D, int(q), bool(exclude_self))
    return _knn_np(D, int(q), exclude_self)


def neighbor_counts(idx, Y, use_numba=None):
    """Per query row, number of neighbors carrying each label."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if _pick(use_numba):
        return _neighbor_counts_nb(idx, Y)
    return _neighbor_counts_np(idx, Y)


def _pick(use_numba):
    if use_numba is None:
        return USE_NUMBA
    if use_numba and njit is None:
        raise RuntimeError("numba is not installed")
    return bool(use_numba)
