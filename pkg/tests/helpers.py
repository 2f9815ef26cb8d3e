"""Small dataset helpers shared across test modules."""

from adsel.data import Dataset
from adsel.harness import simulate_missing


def masked(ds, frac, seed):
    """Copy of ``ds`` with ``frac`` of each label column hidden."""
    observed, P, hidden = simulate_missing(ds.labels, frac, seed)
    return Dataset(ds.features, observed, P, hidden)
