"""Feature selection for incomplete multi-dimensional labels via adaptive dual self-expression."""

from .data import (
    CsvParseError,
    Dataset,
    FeatureMatrix,
    load_csv_matrix,
    normalize_features,
    save_csv_matrix,
    validate_dataset,
)
from .graph import build_affinity, build_laplacian
from .harness import (
    ExperimentConfig,
    binarize_labels,
    grid_search,
    run_experiment,
    sensitivity_sweep,
    simulate_missing,
    tuned_experiment,
)
from .metrics import (
    MetricReport,
    average_precision,
    coverage,
    friedman_test,
    hamming_loss,
    ranking_loss,
)
from .mlknn import mlknn_fit, mlknn_predict
from .ranking import FeatureRanking, rank_features, select_top
from .redundancy import build_redundancy
from .solver import Hyperparams, ModelState, SolverError, fit

__version__ = "0.1.0"

__all__ = [
    "average_precision",
    "binarize_labels",
    "build_affinity",
    "build_laplacian",
    "build_redundancy",
    "coverage",
    "CsvParseError",
    "Dataset",
    "ExperimentConfig",
    "FeatureMatrix",
    "FeatureRanking",
    "fit",
    "friedman_test",
    "grid_search",
    "hamming_loss",
    "Hyperparams",
    "load_csv_matrix",
    "MetricReport",
    "mlknn_fit",
    "mlknn_predict",
    "ModelState",
    "normalize_features",
    "rank_features",
    "ranking_loss",
    "run_experiment",
    "save_csv_matrix",
    "select_top",
    "sensitivity_sweep",
    "simulate_missing",
    "SolverError",
    "tuned_experiment",
    "validate_dataset",
]
