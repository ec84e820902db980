"""Exact k-NN queries and plurality voting over cells."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset


@dataclass(frozen=True)
class Query:
    x: np.ndarray
    y: int
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))


@dataclass(frozen=True)
class VoteResult:
    counts: np.ndarray
    winner: int


def _sqdist(ds: Dataset, x) -> np.ndarray:
    diff = ds.points - np.asarray(x, dtype=float)
    return np.einsum("ij,ij->i", diff, diff)


def knn_indices(ds: Dataset, x, k: int) -> tuple:
    """Sorted tuple of the ``k`` generators nearest to ``x`` (ties: lower index)."""
    if not 1 <= k <= ds.n:
        raise ValueError(f"k={k} outside 1..{ds.n}")
    order = np.argsort(_sqdist(ds, x), kind="stable")[:k]
    return tuple(sorted(int(i) for i in order))


def vote(ds: Dataset, cell, x=None) -> VoteResult:
    """Plurality vote of the generators in ``cell``.

    Ties go to the class with the smallest summed distance from ``x`` to its
    voters when ``x`` is given, and to the smallest class index otherwise.
    """
    cell = np.asarray(cell, dtype=np.intp)
    counts = np.bincount(ds.labels[cell], minlength=ds.n_classes)
    tied = np.flatnonzero(counts == counts.max())
    if tied.size == 1 or x is None:
        return VoteResult(counts, int(tied[0]))
    dist = np.sqrt(_sqdist(ds, x)[cell])
    sums = np.array([dist[ds.labels[cell] == c].sum() for c in tied])
    return VoteResult(counts, int(tied[np.argmin(sums)]))


def classify(ds: Dataset, x, k: int) -> int:
    return vote(ds, knn_indices(ds, x, k), x).winner


def classify_many(ds: Dataset, Z, k: int) -> np.ndarray:
    """Row-wise :func:`classify` for a ``(m, d)`` batch."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    sq = (np.einsum("ij,ij->i", Z, Z)[:, None] - 2.0 * Z @ ds.points.T
          + np.einsum("ij,ij->i", ds.points, ds.points)[None, :])
    out = np.empty(Z.shape[0], dtype=np.intp)
    for r in range(Z.shape[0]):
        nn = np.argsort(sq[r], kind="stable")[:k]
        out[r] = vote(ds, nn, Z[r]).winner
    return out


def cell_is_adversarial(ds: Dataset, cell, y: int) -> bool:
    return vote(ds, cell).winner != y


def m_nearest(ds: Dataset, i: int, m: int, exclude=()) -> list:
    """The ``m`` generators nearest to generator ``i`` (``i`` itself excluded),
    with members of ``exclude`` removed afterwards."""
    if m < 1:
        raise ValueError("m must be positive")
    d2 = _sqdist(ds, ds.points[i])
    d2[i] = np.inf
    m = min(m, ds.n - 1)
    order = np.argsort(d2, kind="stable")[:m]
    drop = set(exclude)
    return [int(j) for j in order if int(j) not in drop]


class NeighborCache:
    """Memoizes per-generator neighbor orderings for repeated ``m_nearest`` calls."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        self._order: dict[int, np.ndarray] = {}

    def nearest(self, i: int, m: int, exclude=()) -> list:
        order = self._order.get(i)
        if order is None or order.size < min(m, self.ds.n - 1):
            d2 = _sqdist(self.ds, self.ds.points[i])
            d2[i] = np.inf
            order = np.argsort(d2, kind="stable")[:min(self.ds.n - 1, max(4 * m, 64))]
            self._order[i] = order
        drop = set(exclude)
        return [int(j) for j in order[:m] if int(j) not in drop]
