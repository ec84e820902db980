"""Best-first search for the nearest adversarial order-k cell.

Cells are explored from the one containing the query outwards, in order of
their distance from the query.  Each explored cell contributes candidate
neighbors (one per swapped generator pair); their distances come from the
dual QP solver, and the first adversarial cell taken off the queue is the
closest one.  The distance of the last entry taken off the queue is a lower
bound on the optimum at any time, which is what a time-limited run reports.
"""

from __future__ import annotations

import heapq
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog

from .data import Dataset
from .geometry import ConstraintSet, FacetCandidate, cell_constraints, neighbor_key
from .knn import NeighborCache, Query, cell_is_adversarial, classify, knn_indices
from .qp import (DEFAULT_OPTIONS, PRUNED, SolverOptions, candidate_pairs,
                 facet_constraints, gca_project, test_activeness)

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
BOUNDED = "bounded"
UPPER_ONLY = "upper_only"
INFEASIBLE_QUERY = "infeasible_query"

NUDGE = 1e-7


@dataclass(frozen=True)
class AttackConfig:
    """Search settings.

    Parameters
    ----------
    k : int
        Number of neighbors; must be odd.
    mode : {"exact", "approx"}
        ``exact`` considers all ``k (n - k)`` bisectors of a cell, ``approx``
        only those towards the ``m`` nearest generators of each member.
    m : int
        Neighborhood size of the approximate mode.
    distance_target : {"cell", "facet"}
        Rank neighbors by the distance to the neighbor cell or to the shared
        facet.
    time_limit : float or None
        Seconds per query.
    init : {"line_search", "none"}
        How the upper bound is initialized.
    prune : bool
        Skip candidates provably farther than the current upper bound.
    """

    k: int = 3
    mode: str = "approx"
    m: int = 20
    distance_target: str = "cell"
    time_limit: float | None = 100.0
    init: str = "line_search"
    prune: bool = True
    seed: int = 0
    line_search_steps: int = 40
    line_search_targets: int | None = 20
    solver: SolverOptions = field(default_factory=lambda: DEFAULT_OPTIONS)

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be a positive odd integer, got {self.k}")
        if self.mode not in ("exact", "approx"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "approx" and self.m < 1:
            raise ValueError("approximate mode needs m >= 1")
        if self.distance_target not in ("cell", "facet"):
            raise ValueError(f"unknown distance target {self.distance_target!r}")
        if self.time_limit is not None and not self.time_limit > 0:
            raise ValueError("time_limit must be positive or None")
        if self.init not in ("line_search", "none"):
            raise ValueError(f"unknown init {self.init!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["solver"] = asdict(self.solver)
        return out


@dataclass
class Certificate:
    """Outcome of one query.

    ``epsilon`` is an upper bound on the minimal adversarial distance
    (the distance to the adversarial cell found) and ``adv_point`` a point
    just past it that the classifier mislabels.  ``lower_bound`` is sound in
    exact mode; ``status == "optimal"`` means the two coincide.
    """

    status: str
    epsilon: float
    lower_bound: float
    adv_point: np.ndarray | None
    cells_visited: int = 0
    facets_solved: int = 0
    facets_pruned: int = 0
    wall_time: float = 0.0
    pop_trace: list = field(default_factory=list, repr=False)
    adversarial_cell: tuple | None = None
    timed_out: bool = False

    @property
    def gap(self) -> float:
        return self.epsilon - self.lower_bound

    def to_dict(self, trace: bool = False) -> dict:
        out = {
            "status": self.status,
            "epsilon": _num(self.epsilon),
            "lower_bound": _num(self.lower_bound),
            "adv_point": None if self.adv_point is None else [float(v) for v in self.adv_point],
            "stats": {
                "cells_visited": self.cells_visited,
                "facets_solved": self.facets_solved,
                "facets_pruned": self.facets_pruned,
                "wall_time": self.wall_time,
                "timed_out": self.timed_out,
            },
            "adversarial_cell": None if self.adversarial_cell is None else list(self.adversarial_cell),
        }
        if trace:
            out["pop_trace"] = [float(v) for v in self.pop_trace]
        return out

    @classmethod
    def from_dict(cls, obj) -> Certificate:
        stats = obj.get("stats", {})
        adv = obj.get("adv_point")
        cell = obj.get("adversarial_cell")
        return cls(obj["status"], float(obj["epsilon"]), float(obj["lower_bound"]),
                   None if adv is None else np.asarray(adv, float),
                   stats.get("cells_visited", 0), stats.get("facets_solved", 0),
                   stats.get("facets_pruned", 0), stats.get("wall_time", 0.0),
                   list(obj.get("pop_trace", [])),
                   None if cell is None else tuple(cell), stats.get("timed_out", False))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(trace=True))


def _num(v: float):
    # strict JSON has no infinity; "inf" parses back through float()
    return float(v) if np.isfinite(v) else ("inf" if v > 0 else "-inf")


def pop_monotone_check(trace, atol: float = 1e-9) -> bool:
    """True iff the popped distances never decrease (beyond ``atol``)."""
    trace = np.asarray(trace, dtype=float)
    return bool(trace.size < 2 or np.all(np.diff(trace) >= -atol))


def init_epsilon_line_search(ds: Dataset, q: Query, steps: int = 40,
                             max_targets: int | None = 20):
    """Upper bound by bisection along segments towards wrong-label generators.

    For each of the ``max_targets`` nearest generators ``g`` whose label is
    not ``q.y`` (all of them when ``None``), bisect ``s`` in ``(0, 1]`` for
    the smallest ``x + s (g - x)`` the classifier mislabels.  Returns
    ``(epsilon, point)``, or ``(inf, None)`` if no segment ends mislabelled.
    """
    x = q.x
    others = np.flatnonzero(ds.labels != q.y)
    if others.size == 0:
        return np.inf, None
    dist = np.linalg.norm(ds.points[others] - x, axis=1)
    order = others[np.argsort(dist, kind="stable")]
    if max_targets is not None:
        order = order[:max_targets]
    best, best_pt = np.inf, None
    for g in order:
        direction = ds.points[g] - x
        length = float(np.linalg.norm(direction))
        if length >= best or classify(ds, ds.points[g], q.k) == q.y:
            continue
        lo, hi = 0.0, 1.0
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if classify(ds, x + mid * direction, q.k) != q.y:
                hi = mid
            else:
                lo = mid
        point = x + min(1.0, hi + 1e-9 / length) * direction
        if classify(ds, point, q.k) == q.y:
            point = x + hi * direction
        eps = float(np.linalg.norm(point - x))
        if eps < best:
            best, best_pt = eps, point
    if best_pt is None:
        log.info("line search found no mislabelled segment end")
    return best, best_pt


def _interior_point(ds: Dataset, cell, near, radius: float) -> np.ndarray | None:
    """Chebyshev center of ``cell`` intersected with a box of half-width
    ``radius`` around ``near``; None if that intersection has no interior."""
    cs = cell_constraints(ds, cell)
    norms = np.linalg.norm(cs.A, axis=1)
    d = ds.d
    A = np.hstack([cs.A, norms[:, None]])
    c = np.zeros(d + 1)
    c[-1] = -1.0
    bounds = [(float(v - radius), float(v + radius)) for v in near] + [(0.0, None)]
    res = linprog(c, A_ub=A, b_ub=cs.b, bounds=bounds, method="highs")
    if res.status != 0 or res.x[-1] <= 0:
        return None
    return res.x[:d]


def make_adversarial_point(ds: Dataset, q: Query, z, cell) -> np.ndarray | None:
    """A point near ``z`` (closest point of the adversarial ``cell``) that the
    classifier mislabels: ``z`` pushed slightly away from ``x`` or, failing
    that, moved towards the interior of ``cell``."""
    x = q.x
    z = np.asarray(z, dtype=float)
    u = z - x
    nu = float(np.linalg.norm(u))
    if nu > 0:
        cand = z + NUDGE * u / nu
        if classify(ds, cand, q.k) != q.y:
            return cand
    for radius in (1e-6, 1e-4, 1e-2):
        center = _interior_point(ds, cell, z, radius * (1.0 + nu))
        if center is not None and classify(ds, center, q.k) != q.y:
            break
    else:
        return None
    # smallest step along [z, center] that lands in a mislabelled region
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if classify(ds, z + mid * (center - z), q.k) != q.y:
            hi = mid
        else:
            lo = mid
    return z + hi * (center - z)


class _Search:
    """State of one best-first run; see :func:`best_first_attack`."""

    def __init__(self, ds: Dataset, q: Query, cfg: AttackConfig, deadline):
        self.ds, self.q, self.cfg = ds, q, cfg
        self.exact = cfg.mode == "exact"
        self.m = None if self.exact else cfg.m
        self.cache = NeighborCache(ds)
        self.deadline = deadline
        self.eps = np.inf
        self.adv_point = None
        self.adv_cell = None
        self.visited: set = set()
        self.heap: list = []
        self.cell_dist: dict = {}
        self.solved = 0
        self.pruned = 0
        self.trace: list = []
        diff = ds.points - q.x
        self._dx = np.einsum("ij,ij->i", diff, diff)

    def expired(self) -> bool:
        return self.deadline is not None and time.perf_counter() > self.deadline

    def _solve(self, cs: ConstraintSet):
        cap = self.eps if self.cfg.prune else None
        self.solved += 1
        res = gca_project(self.q.x, cs, eps_cap=cap, options=self.cfg.solver)
        if res.status == PRUNED:
            self.pruned += 1
            return None
        if not test_activeness(res, cs, x=self.q.x):
            return None
        return res

    def _lower_bounds(self, pairs) -> np.ndarray:
        """Cheap lower bounds on the candidate distances, one per ``(out, in)`` pair.

        A facet lies on the bisector, so the hyperplane distance bounds it; a
        neighbor cell lies in the halfspace closer to the incoming generator,
        so only the distance to that halfspace is a valid bound.
        """
        out, inn = pairs[:, 0], pairs[:, 1]
        X = self.ds.points
        sep = 2.0 * np.linalg.norm(X[out] - X[inn], axis=1)
        signed = (self._dx[inn] - self._dx[out]) / sep
        if self.cfg.distance_target == "facet":
            return np.abs(signed)
        return np.maximum(signed, 0.0)

    def _distance(self, cell, out, inn, full: bool):
        """Projection result for candidate ``(out, inn)`` of ``cell``, or None."""
        m = None if full else self.m
        if self.cfg.distance_target == "cell":
            nb = neighbor_key(cell, out, inn)
            key = (nb, full or self.exact)
            # eps never grows, so a cached prune or verdict stays valid
            if key in self.cell_dist:
                return self.cell_dist[key]
            res = self._solve(facet_constraints(self.ds, cell, (out, inn), "cell", m, self.cache))
            self.cell_dist[key] = res
            return res
        return self._solve(facet_constraints(self.ds, cell, (out, inn), "facet", m, self.cache))

    def expand(self, cell) -> bool:
        """Push the unvisited neighbors of ``cell``; False if time ran out."""
        pairs = np.array(candidate_pairs(self.ds, cell, self.m, self.cache), dtype=np.intp)
        if pairs.size == 0:
            return True
        if self.cfg.prune and np.isfinite(self.eps):
            keep = self._lower_bounds(pairs) <= self.eps
            self.pruned += int(pairs.shape[0] - keep.sum())
            pairs = pairs[keep]
        for out, inn in pairs.tolist():
            if self.expired():
                return False
            nb = neighbor_key(cell, out, inn)
            if nb in self.visited:
                continue
            # eps may have shrunk since the vectorized filter
            if self.cfg.prune and self._lower_bounds(np.array([[out, inn]]))[0] > self.eps:
                self.pruned += 1
                continue
            adv = cell_is_adversarial(self.ds, nb, self.q.y)
            # adversarial candidates always get the full constraint set
            res = self._distance(cell, out, inn, full=adv)
            if res is None:
                continue
            if adv and res.dist < self.eps:
                point = make_adversarial_point(self.ds, self.q, res.z, nb)
                if point is None:
                    log.warning("no mislabelled point found near cell %s", nb)
                    continue
                self.eps, self.adv_point, self.adv_cell = res.dist, point, nb
            if self.cfg.prune and (res.dist > self.eps or (not adv and res.dist >= self.eps)):
                self.pruned += 1
                continue
            heapq.heappush(self.heap, FacetCandidate(res.dist, cell, out, inn, adv))
        return True

    def run(self) -> str:
        q = self.q
        cell0 = knn_indices(self.ds, q.x, q.k)
        self.visited.add(cell0)
        if not self.expand(cell0):
            return BOUNDED
        while True:
            if self.expired():
                return BOUNDED
            entry = None
            while self.heap:
                top = heapq.heappop(self.heap)
                if top.neighbor not in self.visited:
                    entry = top
                    break
            if entry is None:
                # queue exhausted: every cell closer than eps has been seen
                if np.isfinite(self.eps):
                    self.trace.append(self.eps)
                return OPTIMAL
            if entry.dist >= self.eps:
                self.trace.append(self.eps)
                return OPTIMAL
            self.trace.append(entry.dist)
            if entry.is_adversarial:
                return OPTIMAL
            nb = entry.neighbor
            self.visited.add(nb)
            if not self.expand(nb):
                return BOUNDED


def best_first_attack(ds: Dataset, q: Query, cfg: AttackConfig) -> Certificate:
    """Minimum-norm perturbation moving ``q.x`` into a mislabelled cell.

    Parameters
    ----------
    ds : Dataset
        Generators of the k-NN classifier (``q.k`` must equal ``cfg.k``).
    q : Query
        Point, its true label and ``k``.
    cfg : AttackConfig

    Returns
    -------
    Certificate
        ``optimal`` in exact mode unless the time limit hit (``bounded``);
        approximate runs report ``upper_only``.  Queries the classifier
        already gets wrong yield ``infeasible_query`` with ``epsilon = 0``.
    """
    if q.k != cfg.k:
        raise ValueError(f"query k={q.k} differs from config k={cfg.k}")
    if q.k >= ds.n:
        raise ValueError(f"k={q.k} needs at least {q.k + 1} generators")
    start = time.perf_counter()
    deadline = None if cfg.time_limit is None else start + cfg.time_limit
    if classify(ds, q.x, q.k) != q.y:
        return Certificate(INFEASIBLE_QUERY, 0.0, 0.0, q.x.copy(),
                           wall_time=time.perf_counter() - start)
    search = _Search(ds, q, cfg, deadline)
    if cfg.init == "line_search":
        eps, point = init_epsilon_line_search(ds, q, cfg.line_search_steps,
                                              cfg.line_search_targets)
        if point is not None:
            search.eps, search.adv_point = eps, point
    status = search.run()
    timed_out = status == BOUNDED
    lower = search.trace[-1] if search.trace else 0.0
    if status == OPTIMAL:
        lower = search.eps
    if not search.exact:
        status = UPPER_ONLY
    return Certificate(status, float(search.eps), float(min(lower, search.eps)),
                       search.adv_point, len(search.visited), search.solved,
                       search.pruned, time.perf_counter() - start, search.trace,
                       search.adv_cell, timed_out)


def attack_many(ds: Dataset, X, y, cfg: AttackConfig) -> list[Certificate]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return [best_first_attack(ds, Query(x, int(t), cfg.k), cfg) for x, t in zip(X, y)]


__all__ = [
    "AttackConfig", "Certificate", "best_first_attack", "attack_many",
    "init_epsilon_line_search", "make_adversarial_point", "pop_monotone_check",
    "OPTIMAL", "BOUNDED", "UPPER_ONLY", "INFEASIBLE_QUERY",
]
