"""Minimum-norm adversarial examples for k-nearest-neighbor classifiers.

The search walks the order-k Voronoi cells of the training set outwards from
the query, ranking cells by their distance to it, and stops at the first cell
whose majority label differs from the query's label.
"""

__version__ = "0.1.0"

from .data import (Dataset, DataError, MinMaxParams, SplitSpec, export_csv, gen_gaussian,
                   jitter, load_csv, load_dataset, load_libsvm, normalize_minmax, split)
from .estimator import KNNAdversary
from .geometry import ConstraintSet, FacetCandidate, Halfspace, Hyperplane
from .knn import Query, classify, knn_indices
from .oracle import oracle_min_distance, reference_project
from .qp import ProjectionResult, SolverOptions, gca_project, test_activeness
from .report import RunReport, two_gaussian_closeness
from .search import AttackConfig, Certificate, best_first_attack, pop_monotone_check

__all__ = [
    "Dataset", "DataError", "MinMaxParams", "SplitSpec", "export_csv", "gen_gaussian",
    "jitter", "load_csv", "load_dataset", "load_libsvm", "normalize_minmax", "split",
    "KNNAdversary", "ConstraintSet", "FacetCandidate", "Halfspace", "Hyperplane",
    "Query", "classify", "knn_indices", "oracle_min_distance", "reference_project",
    "ProjectionResult", "SolverOptions", "gca_project", "test_activeness",
    "RunReport", "two_gaussian_closeness", "AttackConfig", "Certificate",
    "best_first_attack", "pop_monotone_check",
]
