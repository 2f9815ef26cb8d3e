"""Matrix containers, CSV ingestion and dataset validation.

Features are stored d x n (rows are features, columns are samples). Labels
and masks are n x k. Every array held by a container is made read-only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

ROWS_ARE_FEATURES = "rows-are-features"
ROWS_ARE_SAMPLES = "rows-are-samples"
ORIENTATIONS = (ROWS_ARE_FEATURES, ROWS_ARE_SAMPLES)


class CsvParseError(ValueError):
    """Malformed CSV input. ``row`` and ``col`` are 1-based file positions."""

    def __init__(self, message, row=None, col=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"column {col}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.row = row
        self.col = col


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # d x n
    feature_names: Optional[tuple] = None
    constant_rows: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", _frozen(values))
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(str(s) for s in self.feature_names))
        if self.constant_rows is not None:
            object.__setattr__(self, "constant_rows", _frozen(self.constant_rows, bool))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class Dataset:
    """Features, observed labels and the observation mask.

    ``labels`` holds 0 wherever ``mask`` is 0. ``hidden_labels``, when given,
    is the complete ground-truth label matrix (used for evaluation and
    recovery checks only). ``groups`` optionally carries a participant id
    per sample for grouped splitting.
    """

    features: FeatureMatrix
    labels: np.ndarray
    mask: Optional[np.ndarray] = None
    hidden_labels: Optional[np.ndarray] = None
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        if not isinstance(self.features, FeatureMatrix):
            object.__setattr__(self, "features", FeatureMatrix(self.features))
        labels = np.atleast_2d(np.asarray(self.labels, dtype=np.float64))
        object.__setattr__(self, "labels", _frozen(labels))
        mask = np.ones_like(labels) if self.mask is None else np.asarray(self.mask, dtype=np.float64)
        object.__setattr__(self, "mask", _frozen(mask))
        if self.hidden_labels is not None:
            object.__setattr__(self, "hidden_labels", _frozen(self.hidden_labels))
        if self.groups is not None:
            object.__setattr__(self, "groups", _frozen(self.groups, object))

    @property
    def X(self):
        return self.features.values

    @property
    def n_features(self):
        return self.features.values.shape[0]

    @property
    def n_samples(self):
        return self.features.values.shape[1]

    @property
    def n_labels(self):
        return self.labels.shape[1]

    def full_labels(self):
        """Ground-truth labels: ``hidden_labels`` if present, else ``labels``."""
        if self.hidden_labels is not None:
            return self.hidden_labels
        return self.labels

    def subset(self, samples=None, features=None):
        """New Dataset restricted to the given sample and/or feature indices."""
        X = self.features.values
        names = self.features.feature_names
        flags = self.features.constant_rows
        if features is not None:
            features = np.asarray(features, dtype=np.int64)
            X = X[features]
            if names is not None:
                names = tuple(names[i] for i in features)
            if flags is not None:
                flags = flags[features]
        sl = slice(None) if samples is None else np.asarray(samples, dtype=np.int64)
        return Dataset(
            FeatureMatrix(X[:, sl], names, flags),
            self.labels[sl],
            self.mask[sl],
            None if self.hidden_labels is None else self.hidden_labels[sl],
            None if self.groups is None else self.groups[sl],
        )


class CsvMatrix(NamedTuple):
    values: np.ndarray
    names: Optional[list]


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv_matrix(path, orientation=ROWS_ARE_FEATURES) -> CsvMatrix:
    """Read a rectangular numeric CSV.

    A first row containing any non-numeric cell is taken as a header and its
    cells returned as ``names``. With ``rows-are-samples`` the matrix is
    transposed so that the result is features x samples; header names then
    label the features.
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}, got {orientation!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)]
    # tolerate trailing blank lines only
    while rows and not any(c.strip() for c in rows[-1]):
        rows.pop()
    if not rows:
        raise CsvParseError(f"empty file {path}")

    names = None
    start = 0
    if any(not _is_number(c.strip()) for c in rows[0]):
        names = [c.strip() for c in rows[0]]
        start = 1
    if start >= len(rows):
        raise CsvParseError(f"no data rows in {path}", row=1)

    width = len(names) if names is not None else len(rows[start])
    data = np.empty((len(rows) - start, width))
    for r in range(start, len(rows)):
        row = rows[r]
        if len(row) != width:
            raise CsvParseError(f"expected {width} cells, found {len(row)}", row=r + 1)
        for c, cell in enumerate(row):
            try:
                v = float(cell.strip())
            except ValueError:
                raise CsvParseError(f"non-numeric cell {cell!r}", row=r + 1, col=c + 1) from None
            if not np.isfinite(v):
                raise CsvParseError(f"non-finite value {cell!r}", row=r + 1, col=c + 1)
            data[r - start, c] = v

    if orientation == ROWS_ARE_SAMPLES:
        data = data.T.copy()
    return CsvMatrix(data, names)


def save_csv_matrix(path, values, names: Optional[Sequence[str]] = None):
    """Write a matrix with 17 significant digits so it reloads bit-identically."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if names is not None:
            w.writerow(list(names))
        for row in values:
            w.writerow([format(float(v), ".17g") for v in row])


def load_features(path, orientation=ROWS_ARE_SAMPLES) -> FeatureMatrix:
    m = load_csv_matrix(path, orientation)
    names = m.names if orientation == ROWS_ARE_SAMPLES else None
    return FeatureMatrix(m.values, names)


def load_labels(path) -> np.ndarray:
    """Labels, masks and ratings are always stored one sample per row."""
    return load_csv_matrix(path, ROWS_ARE_FEATURES).values


def normalize_features(X: FeatureMatrix, mode="zscore") -> FeatureMatrix:
    """Per-feature z-score (population variance). Constant rows become 0 and are flagged."""
    if mode == "none":
        return X
    if mode != "zscore":
        raise ValueError(f"unknown normalization mode {mode!r}")
    V = X.values
    span = np.ptp(V, axis=1)
    constant = span == 0
    Z = np.zeros_like(V)
    live = ~constant
    # dividing by the range first keeps tiny-magnitude rows from underflowing
    scaled = (V[live] - V[live].mean(axis=1, keepdims=True)) / span[live, None]
    Z[live] = scaled / np.sqrt((scaled**2).mean(axis=1, keepdims=True))
    return FeatureMatrix(Z, X.feature_names, constant)


def _binary(a):
    return np.all((a == 0) | (a == 1))


def validate_dataset(ds: Dataset) -> list:
    """List every violated Dataset invariant; empty means valid."""
    problems = []
    X = ds.features.values
    Y = ds.labels
    P = ds.mask
    if X.ndim != 2:
        problems.append("features must be a 2-D matrix")
        return problems
    d, n = X.shape
    if not np.all(np.isfinite(X)):
        problems.append("non-finite feature value")
    if d < 1:
        problems.append("need at least one feature")
    if n < 2:
        problems.append("need at least two samples")
    if ds.features.feature_names is not None and len(ds.features.feature_names) != d:
        problems.append("feature_names length does not match feature count")
    if Y.ndim != 2:
        problems.append("labels must be a 2-D matrix")
        return problems
    if Y.shape[0] != n:
        problems.append(f"label rows ({Y.shape[0]}) do not match sample count ({n})")
    if Y.shape[1] < 2:
        problems.append("need at least two label dimensions")
    if not _binary(Y):
        problems.append("non-binary label")
    if P.shape != Y.shape:
        problems.append(f"mask shape {P.shape} differs from label shape {Y.shape}")
    else:
        if not _binary(P):
            problems.append("non-binary mask")
        if np.any((P == 0) & (Y != 0)):
            problems.append("unmasked hidden label")
    H = ds.hidden_labels
    if H is not None:
        if H.shape != Y.shape:
            problems.append(f"hidden_labels shape {H.shape} differs from label shape {Y.shape}")
        elif not _binary(H):
            problems.append("non-binary hidden label")
        elif P.shape == Y.shape and np.any((P == 1) & (H != Y)):
            problems.append("hidden_labels disagree with observed labels")
    if ds.groups is not None and len(ds.groups) != n:
        problems.append("groups length does not match sample count")
    return problems
