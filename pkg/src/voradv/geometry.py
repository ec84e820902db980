"""Bisectors, order-k cell constraints and candidate neighbor generation.

A generator pair ``(inside, outside)`` yields the halfspace of points at least
as close to ``inside`` as to ``outside``::

    2 (x_out - x_in) . z <= |x_out|^2 - |x_in|^2

Normals are deliberately left unnormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .knn import NeighborCache


@dataclass(frozen=True)
class Hyperplane:
    """The set ``{z : <a, z> = b}``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        if not np.linalg.norm(self.a) > 0:
            raise ValueError("hyperplane normal must be nonzero")


@dataclass(frozen=True)
class Halfspace:
    """The set ``{z : <a, z> <= b}`` closer to ``inside`` than ``outside``."""

    a: np.ndarray
    b: float
    inside: int = -1
    outside: int = -1

    def contains(self, z, tol: float = 0.0) -> bool:
        return float(np.dot(self.a, z)) <= self.b + tol

    @property
    def boundary(self) -> Hyperplane:
        return Hyperplane(self.a, self.b)


@dataclass(frozen=True)
class ConstraintSet:
    """Stacked halfspaces ``A z <= b`` plus an optional equality hyperplane.

    ``inside``/``outside`` tag each row with its generator pair (or -1 for
    constraints that do not come from a bisector).
    """

    A: np.ndarray
    b: np.ndarray
    inside: np.ndarray | None = None
    outside: np.ndarray | None = None
    equality: Hyperplane | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.size == 0:
            A = A.reshape(0, A.shape[-1] if A.ndim == 2 else 0)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError("A and b row counts differ")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("constraint data must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        m = b.shape[0]
        for name in ("inside", "outside"):
            tags = getattr(self, name)
            tags = np.full(m, -1, np.intp) if tags is None else np.asarray(tags, np.intp)
            object.__setattr__(self, name, tags)

    def __len__(self) -> int:
        return self.b.shape[0] + (self.equality is not None)

    @property
    def dim(self) -> int:
        if self.A.shape[0]:
            return self.A.shape[1]
        return self.equality.a.shape[0] if self.equality is not None else 0

    @property
    def halfspaces(self) -> list[Halfspace]:
        return [Halfspace(self.A[r], float(self.b[r]), int(self.inside[r]), int(self.outside[r]))
                for r in range(self.b.shape[0])]

    def with_equality(self, h: Hyperplane) -> ConstraintSet:
        return ConstraintSet(self.A, self.b, self.inside, self.outside, h)

    def residual(self, z) -> float:
        """Largest constraint violation at ``z`` (0 when feasible)."""
        z = np.asarray(z, dtype=float)
        r = 0.0
        if self.b.size:
            r = max(r, float(np.max(self.A @ z - self.b)))
        if self.equality is not None:
            r = max(r, abs(float(self.equality.a @ z) - self.equality.b))
        return max(r, 0.0)


@dataclass(frozen=True, order=True)
class FacetCandidate:
    dist: float
    cell: tuple
    swap_out: int
    swap_in: int
    is_adversarial: bool = False

    @property
    def neighbor(self) -> tuple:
        return neighbor_key(self.cell, self.swap_out, self.swap_in)


def neighbor_key(cell, swap_out: int, swap_in: int) -> tuple:
    return tuple(sorted([g for g in cell if g != swap_out] + [swap_in]))


def bisector_halfspace(ds: Dataset, inside: int, outside: int) -> Halfspace:
    if inside == outside:
        raise ValueError("bisector needs two distinct generators")
    x_in, x_out = ds.points[inside], ds.points[outside]
    a = 2.0 * (x_out - x_in)
    if not np.any(a):
        raise ValueError(f"generators {inside} and {outside} coincide; jitter the data")
    return Halfspace(a, float(x_out @ x_out - x_in @ x_in), inside, outside)


def bisector_plane(ds: Dataset, a: int, b: int) -> Hyperplane:
    return bisector_halfspace(ds, a, b).boundary


def pair_constraints(ds: Dataset, inside, outside) -> ConstraintSet:
    """Vectorized halfspaces for parallel arrays of (inside, outside) pairs."""
    inside = np.asarray(inside, dtype=np.intp)
    outside = np.asarray(outside, dtype=np.intp)
    X = ds.points
    A = 2.0 * (X[outside] - X[inside])
    sq = np.einsum("ij,ij->i", X, X)
    b = sq[outside] - sq[inside]
    if A.shape[0] and not np.all(np.any(A != 0, axis=1)):
        raise ValueError("coincident generators in constraint pairs; jitter the data")
    return ConstraintSet(A.reshape(-1, ds.d), b, inside, outside)


def candidate_bisectors_exact(ds: Dataset, cell) -> list[tuple[int, int]]:
    """All ``(swap_out, swap_in)`` pairs with ``swap_out`` in ``cell``."""
    members = set(cell)
    rest = [j for j in range(ds.n) if j not in members]
    return [(i, j) for i in sorted(members) for j in rest]


def candidate_bisectors_approx(ds: Dataset, cell, m: int,
                               cache: NeighborCache | None = None) -> list[tuple[int, int]]:
    """Pairs ``(i, j)`` with ``i`` in ``cell`` and ``j`` among the ``m`` nearest
    generators of some member of ``cell`` (members themselves excluded)."""
    if m < 1:
        raise ValueError("m must be positive")
    cache = cache or NeighborCache(ds)
    pool = set()
    for i in cell:
        pool.update(cache.nearest(i, m, exclude=cell))
    rest = sorted(pool)
    return [(i, j) for i in sorted(cell) for j in rest]


def constraints_for_pairs(ds: Dataset, pairs) -> ConstraintSet:
    """Halfspaces keeping the first element of each pair at least as close."""
    if not pairs:
        return ConstraintSet(np.zeros((0, ds.d)), np.zeros(0))
    ins, outs = zip(*pairs)
    return pair_constraints(ds, ins, outs)


def cell_constraints(ds: Dataset, cell) -> ConstraintSet:
    """The ``k (n - k)`` halfspaces whose intersection is the order-k cell."""
    return constraints_for_pairs(ds, candidate_bisectors_exact(ds, cell))


def order1_neighbors_bruteforce(ds: Dataset, i: int, max_n: int = 300, **solver_opts) -> set:
    """Generators whose order-1 cell shares a facet with that of ``i``.

    Each bisector ``(i, j)`` is tested for activeness against the order-1
    cell of ``i``.  Intended for small instances only.
    """
    from .qp import gca_project, test_activeness

    if ds.n > max_n:
        raise ValueError(f"n={ds.n} exceeds the brute-force bound {max_n}; "
                         "use the approximate neighbor sets instead")
    cs = cell_constraints(ds, (i,))
    x = ds.points[i]
    out = set()
    for j in range(ds.n):
        if j == i:
            continue
        facet = cs.with_equality(bisector_plane(ds, i, j))
        res = gca_project(x, facet, **solver_opts)
        if test_activeness(res, facet):
            out.add(j)
    return out
