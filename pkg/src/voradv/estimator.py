"""scikit-learn style wrapper: a k-NN classifier that can certify its own robustness."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset, MinMaxParams, jitter, normalize_minmax
from .knn import Query, classify_many
from .search import INFEASIBLE_QUERY, AttackConfig, Certificate, best_first_attack


class KNNAdversary(ClassifierMixin, TransformerMixin, BaseEstimator):
    """k-NN classifier with minimum-norm adversarial example search.

    Distances and certificates are measured in the normalized feature space
    when ``normalize=True`` (the default); points returned by
    :meth:`perturb` and :meth:`transform` are mapped back to input units.

    Parameters
    ----------
    n_neighbors : int, default=3
        Odd number of voting neighbors.
    mode : {"approx", "exact"}, default="approx"
    m : int, default=20
        Neighborhood size for ``mode="approx"``.
    distance_target : {"cell", "facet"}, default="cell"
    time_limit : float or None, default=100.0
        Seconds per query.
    init : {"line_search", "none"}, default="line_search"
    prune : bool, default=True
    normalize : bool, default=True
        Fit a per-feature min-max map on the training data.
    jitter : float, default=1e-9
        Uniform noise added to the stored generators to break ties.
    random_state : int, default=0

    Attributes
    ----------
    classes_ : ndarray
    dataset_ : Dataset
        The stored (normalized, jittered) generators.
    scaler_ : MinMaxParams or None
    n_features_in_ : int
    """

    def __init__(self, n_neighbors=3, mode="approx", m=20, distance_target="cell",
                 time_limit=100.0, init="line_search", prune=True, normalize=True,
                 jitter=1e-9, random_state=0):
        self.n_neighbors = n_neighbors
        self.mode = mode
        self.m = m
        self.distance_target = distance_target
        self.time_limit = time_limit
        self.init = init
        self.prune = prune
        self.normalize = normalize
        self.jitter = jitter
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self._config()  # fail early on bad parameters
        if X.shape[0] <= self.n_neighbors:
            raise ValueError(f"need more than n_neighbors={self.n_neighbors} samples")
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        codes = self._encoder.transform(y)
        ds = Dataset(X, codes, len(self.classes_), tuple(self.classes_.tolist()))
        self.scaler_ = None
        if self.normalize:
            ds, self.scaler_ = normalize_minmax(ds)
        self.dataset_ = jitter(ds, self.jitter, seed=self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def _config(self) -> AttackConfig:
        return AttackConfig(k=self.n_neighbors, mode=self.mode, m=self.m,
                            distance_target=self.distance_target,
                            time_limit=self.time_limit, init=self.init,
                            prune=self.prune, seed=self.random_state)

    def _scale(self, X) -> np.ndarray:
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X if self.scaler_ is None else self.scaler_.apply(X)

    def _unscale(self, U) -> np.ndarray:
        return U if self.scaler_ is None else self.scaler_.inverse(U)

    def predict(self, X):
        check_is_fitted(self, "dataset_")
        codes = classify_many(self.dataset_, self._scale(X), self.n_neighbors)
        return self.classes_[codes]

    def certify(self, X, y=None) -> list[Certificate]:
        """One :class:`Certificate` per row, against ``y`` (default: the predictions)."""
        check_is_fitted(self, "dataset_")
        U = self._scale(X)
        if y is None:
            codes = classify_many(self.dataset_, U, self.n_neighbors)
        else:
            y = np.asarray(y)
            if y.shape != (U.shape[0],):
                raise ValueError("y must have one label per row of X")
            codes = self._encoder.transform(y)
        cfg = self._config()
        return [best_first_attack(self.dataset_, Query(u, int(c), self.n_neighbors), cfg)
                for u, c in zip(U, codes)]

    def perturb(self, X, y=None):
        """Adversarial points in input units; rows without one are returned unchanged."""
        X = check_array(X, dtype=float)
        out = X.copy()
        for r, cert in enumerate(self.certify(X, y)):
            if cert.status != INFEASIBLE_QUERY and cert.adv_point is not None:
                out[r] = self._unscale(cert.adv_point)
        return out

    def transform(self, X):
        """Nearest points (in input units) where the prediction changes."""
        return self.perturb(X)

    def robustness(self, X, y=None) -> np.ndarray:
        """Certified distances (normalized units); 0 for already-misclassified rows."""
        return np.array([c.epsilon for c in self.certify(X, y)])


__all__ = ["KNNAdversary", "MinMaxParams"]
