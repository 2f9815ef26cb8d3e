"""Seeded synthetic datasets for tests and benchmarks."""

import numpy as np

from .data import Dataset, FeatureMatrix, normalize_features


def random_dataset(seed, d=20, n=30, k=3, p_pos=0.4):
    """Gaussian features with independent Bernoulli labels (every label column non-constant)."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d, n))
    Y = (rng.uniform(size=(n, k)) < p_pos).astype(np.float64)
    for j in range(k):
        if Y[:, j].min() == Y[:, j].max():
            Y[rng.integers(n), j] = 1.0 - Y[0, j]
    return Dataset(FeatureMatrix(X), Y)


def planted_dataset(seed, n=100, n_informative=10, n_noise=90, k=3, rank=2, noise=0.5):
    """Labels generated linearly from a few informative features, padded with noise features.

    Label scores are ``X_inf' B C + noise`` where ``C`` (rank x k) couples the
    label dimensions, so the label matrix has low-rank, correlated structure.
    Features are z-scored and shuffled. Returns ``(dataset, informative_indices)``.
    """
    rng = np.random.default_rng(seed)
    Xi = rng.standard_normal((n_informative, n))
    B = rng.standard_normal((n_informative, rank))
    C = np.zeros((rank, k))
    C[np.arange(k) % rank, np.arange(k)] = 1.0
    C[:, rank:] += 0.7
    Z = Xi.T @ B @ C + noise * rng.standard_normal((n, k))
    Y = (Z > 0).astype(np.float64)
    X = np.vstack([Xi, rng.standard_normal((n_noise, n))])
    perm = rng.permutation(n_informative + n_noise)
    X = X[perm]
    informative = np.sort(np.flatnonzero(perm < n_informative))
    return Dataset(normalize_features(FeatureMatrix(X)), Y), informative
