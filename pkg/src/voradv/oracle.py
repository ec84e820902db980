"""Ground truth at small scale.

Everything here is deliberately independent of the dual coordinate-ascent
solver and of the best-first search: projections use the Lawson-Hanson
least-distance reduction to NNLS, or exhaustive active-set enumeration, and
the minimum adversarial distance is found by scanning every order-k cell.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .data import Dataset
from .geometry import ConstraintSet, bisector_plane, cell_constraints
from .knn import Query
from .qp import FEASIBLE, INFEASIBLE, ProjectionResult


class OracleLimitError(ValueError):
    """The instance is too large for exhaustive enumeration."""


def lawson_hanson_nnls(E, f, max_iter: int | None = None):
    """Solve ``min |E w - f|  s.t.  w >= 0`` by the Lawson-Hanson active set method.

    Returns ``(w, rnorm)``.  The result is checked against the KKT conditions
    and :class:`ArithmeticError` is raised if they fail.
    """
    E = np.asarray(E, dtype=float)
    f = np.asarray(f, dtype=float)
    n = E.shape[1]
    tol = 10.0 * np.finfo(float).eps * max(E.shape) * max(1.0, np.abs(E).sum(axis=0).max())
    max_iter = max_iter or 3 * n + 30
    passive = np.zeros(n, dtype=bool)
    w = np.zeros(n)
    grad = E.T @ (f - E @ w)
    for _ in range(max_iter):
        cand = np.where(~passive, grad, -np.inf)
        j = int(np.argmax(cand))
        if not cand[j] > tol:
            break
        passive[j] = True
        while True:
            s = np.zeros(n)
            s[passive] = np.linalg.lstsq(E[:, passive], f, rcond=None)[0]
            if np.all(s[passive] > 0):
                break
            blocking = passive & (s <= 0)
            alpha = np.min(w[blocking] / (w[blocking] - s[blocking]))
            w = w + alpha * (s - w)
            passive &= w > tol
            w[~passive] = 0.0
        w = s
        grad = E.T @ (f - E @ w)
    r = f - E @ w
    kkt = max(float(np.max(grad[~passive], initial=0.0)),
              float(np.max(np.abs(grad[passive]), initial=0.0)))
    if kkt > 1e3 * tol:
        raise ArithmeticError(f"NNLS did not reach a KKT point (violation {kkt:.3g})")
    return w, float(np.linalg.norm(r))


def _rows(cs: ConstraintSet):
    """Row-normalized inequality form, equality split into two rows."""
    A, b = cs.A, cs.b
    if cs.equality is not None:
        a = cs.equality.a[None, :]
        A = np.vstack([A, a, -a]) if A.size else np.vstack([a, -a])
        b = np.concatenate([b, [cs.equality.b, -cs.equality.b]])
    norms = np.linalg.norm(A, axis=1)
    return A / norms[:, None], b / norms


def ldp_project(x, cs: ConstraintSet, tol: float = 1e-9) -> ProjectionResult:
    """Exact projection by least-distance programming (Lawson & Hanson).

    With ``u = z - x`` the problem is ``min |u|  s.t.  G u >= h``.  Solving the
    NNLS problem ``min |E w - f|, w >= 0`` with ``E = [G'; h']`` and
    ``f = e_{d+1}`` gives either a zero residual (infeasible) or the optimum
    ``u = -r[:d] / r[d]``.
    """
    x = np.asarray(x, dtype=float)
    A, b = _rows(cs)
    d = x.shape[0]
    G = -A
    h = A @ x - b
    E = np.vstack([G.T, h[None, :]])
    f = np.zeros(d + 1)
    f[d] = 1.0
    w, rnorm = lawson_hanson_nnls(E, f)
    r = E @ w - f
    if rnorm <= tol or abs(r[d]) <= tol:
        return ProjectionResult(INFEASIBLE, None, np.inf, np.inf, 0, constraints=cs)
    u = -r[:d] / r[d]
    z = x + u
    if np.max(A @ z - b) > 1e-7 * (1.0 + np.linalg.norm(x)):
        return ProjectionResult(INFEASIBLE, None, np.inf, np.inf, 0, constraints=cs)
    dist = float(np.linalg.norm(u))
    return ProjectionResult(FEASIBLE, z, dist, 0.5 * dist * dist, 0, constraints=cs)


def is_feasible(cs: ConstraintSet) -> bool:
    x0 = np.zeros(cs.dim)
    return ldp_project(x0, cs).feasible


def _affine_projection(x, As, bs):
    # projection onto {As z = bs}; None when rows are dependent
    if As.shape[0] == 0:
        return x.copy()
    gram = As @ As.T
    try:
        L = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        return None
    if np.min(np.diag(L)) <= 1e-10 * np.sqrt(np.max(np.diag(gram))):
        return None
    mu = np.linalg.solve(L.T, np.linalg.solve(L, As @ x - bs))
    return x - As.T @ mu


def reference_project(x, cs: ConstraintSet, max_constraints: int = 25,
                      tol: float = 1e-9) -> ProjectionResult:
    """Exact projection by enumerating candidate active sets.

    Subsets of constraints are explored best-first by the distance from ``x``
    to their affine hull (which only grows when a constraint is added), each
    extended only by constraints its projection violates; the first subset
    whose affine projection satisfies every constraint is optimal.  Emptiness is decided up front by :func:`ldp_project`, since an
    empty polytope would otherwise force a full enumeration.
    """
    x = np.asarray(x, dtype=float)
    if len(cs) > max_constraints:
        raise OracleLimitError(f"{len(cs)} constraints exceed enumeration bound {max_constraints}")
    if not ldp_project(x, cs).feasible:
        return ProjectionResult(INFEASIBLE, None, np.inf, np.inf, 0, constraints=cs)
    A, b = _rows(ConstraintSet(cs.A, cs.b))
    m, d = A.shape[0], x.shape[0]
    if cs.equality is not None:
        na = np.linalg.norm(cs.equality.a)
        eqA = (cs.equality.a / na)[None, :]
        eqb = np.array([cs.equality.b / na])
    else:
        eqA, eqb = np.zeros((0, d)), np.zeros(0)
    scale = tol * (1.0 + np.linalg.norm(x))

    def project(subset):
        As = np.vstack([eqA, A[list(subset)]])
        bs = np.concatenate([eqb, b[list(subset)]])
        return _affine_projection(x, As, bs)

    def feasible(z):
        ok = m == 0 or np.max(A @ z - b) <= scale
        return ok and (eqA.shape[0] == 0 or abs(float(eqA[0] @ z - eqb[0])) <= scale)

    z0 = project(())
    heap = [(float(np.linalg.norm(z0 - x)), (), z0)]
    seen = {()}
    visited = 0
    max_size = d - eqA.shape[0]
    while heap:
        dist, subset, z = heapq.heappop(heap)
        visited += 1
        if feasible(z):
            return ProjectionResult(FEASIBLE, z, dist, 0.5 * dist * dist, visited, constraints=cs)
        if len(subset) >= max_size:
            continue
        # some constraint of the optimal active set is violated at z, so
        # growing only by violated rows still reaches it
        for j in np.flatnonzero(A @ z - b > scale):
            child = tuple(sorted(subset + (int(j),)))
            if child in seen:
                continue
            seen.add(child)
            zc = project(child)
            if zc is not None:
                heapq.heappush(heap, (float(np.linalg.norm(zc - x)), child, zc))
    # feasible per LDP but no candidate within tolerance: degenerate instance
    return ProjectionResult(INFEASIBLE, None, np.inf, np.inf, visited, constraints=cs)


@dataclass
class OracleResult:
    epsilon_star: float
    argmin_cell: tuple | None
    point: np.ndarray | None
    nonempty_cell_count: int | None
    adversarial_cell_count: int | None
    cells_solved: int

    @property
    def status(self) -> str:
        return "optimal" if np.isfinite(self.epsilon_star) else "no_adversarial_cell"


def _bisector_offsets(ds: Dataset, x) -> np.ndarray:
    # v[i, j] = signed distance from x to the halfspace "closer to i than to j"
    X = ds.points
    dx = np.einsum("ij,ij->i", X - x, X - x)
    sep = 2.0 * np.sqrt(np.maximum(
        np.einsum("ij,ij->i", X, X)[:, None] + np.einsum("ij,ij->i", X, X)[None, :]
        - 2.0 * X @ X.T, 0.0))
    np.fill_diagonal(sep, np.inf)
    return (dx[:, None] - dx[None, :]) / sep


def _plurality(ds: Dataset, combos: np.ndarray) -> np.ndarray:
    lab = ds.labels[combos]
    counts = np.stack([(lab == c).sum(axis=1) for c in range(ds.n_classes)], axis=1)
    return counts.argmax(axis=1)


def oracle_min_distance(ds: Dataset, q: Query, cap: int = 100_000,
                        count_cells: bool = False) -> OracleResult:
    """Minimum distance from ``q.x`` to any order-k cell whose plurality differs
    from ``q.y``, by scanning all ``C(n, k)`` cells.

    Cells are visited in order of a halfspace lower bound and the scan stops
    once that bound exceeds the best distance found, so every cell is either
    solved exactly or provably irrelevant.
    """
    n, k = ds.n, q.k
    total = comb(n, k)
    if total > cap:
        raise OracleLimitError(f"C({n},{k})={total} cells exceed the oracle cap {cap}")
    x = np.asarray(q.x, dtype=float)
    combos = np.array(list(combinations(range(n), k)), dtype=np.intp)
    adv = _plurality(ds, combos) != q.y
    v = _bisector_offsets(ds, x)
    adv_combos = combos[adv]
    lower = np.zeros(adv_combos.shape[0])
    chunk = max(1, 2_000_000 // max(1, k * n))
    for s in range(0, adv_combos.shape[0], chunk):
        cc = adv_combos[s:s + chunk]
        block = v[cc]  # (c, k, n)
        inside = np.zeros((cc.shape[0], n), dtype=bool)
        np.put_along_axis(inside, cc, True, axis=1)
        block = np.where(inside[:, None, :], -np.inf, block)
        lower[s:s + chunk] = np.maximum(block.max(axis=(1, 2)), 0.0)

    best, best_cell, best_z, solved = np.inf, None, None, 0
    for idx in np.argsort(lower, kind="stable"):
        if lower[idx] >= best:
            break
        cell = tuple(int(i) for i in adv_combos[idx])
        res = ldp_project(x, cell_constraints(ds, cell))
        solved += 1
        if res.feasible and res.dist < best:
            best, best_cell, best_z = res.dist, cell, res.z

    nonempty = adversarial = None
    if count_cells:
        nonempty = adversarial = 0
        for row, is_adv in zip(combos, adv):
            if is_feasible(cell_constraints(ds, tuple(row))):
                nonempty += 1
                adversarial += int(is_adv)
    return OracleResult(best, best_cell, best_z, nonempty, adversarial, solved)


def nonempty_cells(ds: Dataset, k: int, cap: int = 100_000) -> list[tuple]:
    if comb(ds.n, k) > cap:
        raise OracleLimitError(f"C({ds.n},{k}) cells exceed the oracle cap {cap}")
    return [c for c in combinations(range(ds.n), k) if is_feasible(cell_constraints(ds, c))]


def neighbor_pairs_bruteforce(ds: Dataset, k: int, cap: int = 20_000) -> set:
    """All unordered pairs of nonempty order-k cells sharing a facet.

    Two cells ``L`` and ``L - {i} + {j}`` share a facet when their joint
    constraints intersect the bisector of ``i`` and ``j``.
    """
    cells = nonempty_cells(ds, k, cap)
    alive = set(cells)
    pairs = set()
    for cell in cells:
        members = set(cell)
        for i in cell:
            for j in range(ds.n):
                if j in members:
                    continue
                other = tuple(sorted((members - {i}) | {j}))
                if other not in alive or other < cell:
                    continue
                both = cell_constraints(ds, cell)
                theirs = cell_constraints(ds, other)
                joint = ConstraintSet(np.vstack([both.A, theirs.A]),
                                      np.concatenate([both.b, theirs.b]),
                                      equality=bisector_plane(ds, i, j))
                if is_feasible(joint):
                    pairs.add((cell, other))
    return pairs


@dataclass(frozen=True)
class SmallInstance:
    dataset: Dataset
    query: Query


def random_small_instance(seed: int, n_range=(10, 25), d_range=(2, 5), k_choices=(1, 3, 5),
                          jitter_magnitude: float = 1e-9) -> SmallInstance:
    """Uniform points in the unit cube with random binary labels and one query.

    The query label is the classifier's own prediction, so the query is
    always correctly classified.  Both classes are guaranteed to appear.
    """
    from .data import jitter
    from .knn import classify

    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    k = int(rng.choice(k_choices))
    X = rng.random((n, d))
    y = rng.integers(0, 2, n)
    y[:2] = (0, 1)
    ds = jitter(Dataset(X, y, 2), jitter_magnitude, seed=seed)
    x = rng.random(d)
    return SmallInstance(ds, Query(x, classify(ds, x, k), k))
