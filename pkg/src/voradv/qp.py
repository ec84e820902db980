"""Distance from a point to a polytope (or a face of one) via the dual QP.

The primal is ``min 1/2 |z - x|^2  s.t.  A z <= b  (and <a_eq, z> = b_eq)``.
Its dual ``g(lam) = -1/2 lam' A A' lam + lam' (A x - b)`` is maximized one
coordinate at a time (greedy coordinate ascent); the primal point is
recovered as ``z = x - A' lam``.  With the halved objective the dual optimum
equals ``dist^2 / 2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .data import Dataset
from .geometry import (ConstraintSet, Halfspace, Hyperplane, bisector_plane,
                       candidate_bisectors_approx, candidate_bisectors_exact,
                       constraints_for_pairs, neighbor_key)
from .knn import NeighborCache

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
BUDGET = "budget_exhausted"
PRUNED = "pruned"


@dataclass
class SolverOptions:
    """Tuning knobs for :func:`gca_project`.

    ``tol_step`` bounds the final greedy step; ``tol_feas``/``tol_cs`` are in
    geometric units (residuals divided by the row norm) and are scaled by
    ``1 + |x|``.  ``max_iters=None`` means ``max(50 * rows, 500)``.
    """

    tol_step: float = 1e-10
    tol_feas: float = 1e-6
    tol_cs: float = 1e-6
    max_iters: int | None = None
    divergence_bound: float = 1e6
    window: int = 50
    polish: bool = True
    refresh_every: int = 500


DEFAULT_OPTIONS = SolverOptions()


@dataclass
class ProjectionResult:
    status: str
    z: np.ndarray | None
    dist: float
    dual_value: float
    iterations: int
    lam: np.ndarray | None = None
    diverged: bool = False
    polished: bool = False
    constraints: ConstraintSet | None = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def _stack(cs: ConstraintSet):
    A, b = cs.A, cs.b
    free = np.zeros(b.shape[0], dtype=bool)
    if cs.equality is not None:
        A = np.vstack([A, cs.equality.a[None, :]]) if A.size else cs.equality.a[None, :].astype(float)
        b = np.append(b, cs.equality.b)
        free = np.append(free, True)
    return A, b, free


_EMPTY = "empty"


def _refine(x, A, b, free, lam, tol, max_steps=None):
    """Certify an optimum starting from the support of ``lam``.

    A dual active-set pass (Goldfarb-Idnani style): the working set is first
    pruned to independent rows with nonnegative multipliers, then violated
    rows are added one at a time while multipliers that would turn negative
    are dropped.  Success means a primal feasible point with sign-feasible
    multipliers, i.e. an exact KKT point.  Returns ``(z, lam)``, ``_EMPTY``
    when the pass proves the polytope empty, or ``None`` when inconclusive.
    """
    m, d = A.shape
    norms = np.sqrt(np.einsum("ij,ij->i", A, A))
    U, c = A / norms[:, None], b / norms
    order = [int(i) for i in np.flatnonzero(free)]
    order += [int(i) for i in np.argsort(-lam, kind="stable") if lam[i] > 0 and not free[i]]
    work = []
    for i in order:
        if _independent(U, work, i):
            work.append(i)
    if len(work) < int(free.sum()):
        return None
    while True:
        mu, z = _affine(x, U, c, work)
        neg = [(mu[r], r) for r in range(len(work)) if not free[work[r]] and mu[r] < 0]
        if not neg:
            break
        work.pop(min(neg)[1])
    steps = max_steps or 4 * m + 20
    for _ in range(steps):
        viol = U @ z - c
        viol[free] = np.abs(viol[free])
        if work:
            viol[work] = -np.inf
        p = int(np.argmax(viol))
        if viol[p] <= tol:
            return _certified(x, A, U, c, free, work, tol, norms)
        t_p = 0.0
        while True:
            if work:
                Uw = U[work]
                r = np.linalg.lstsq(Uw @ Uw.T, Uw @ U[p], rcond=None)[0]
                n_p = U[p] - Uw.T @ r
            else:
                r = np.zeros(0)
                n_p = U[p]
            nn = float(n_p @ n_p)
            t_full = float(U[p] @ z - c[p]) / nn if nn > 1e-12 else np.inf
            t_part, blk = np.inf, -1
            for q in range(len(work)):
                if not free[work[q]] and r[q] > 1e-12 and mu[q] / r[q] < t_part:
                    t_part, blk = mu[q] / r[q], q
            if not (np.isfinite(t_full) or np.isfinite(t_part)):
                return _EMPTY  # row p cannot be satisfied with the working set: empty
            t = min(t_full, t_part)
            if t > 1e10:
                return None  # nearly dependent rows, numerically unreliable
            mu = mu - t * r
            t_p += t
            z = z - t * n_p
            if t_full <= t_part:
                work.append(p)
                mu = np.append(mu, t_p)
                break
            work.pop(blk)
            mu = np.delete(mu, blk)
    return None


def _affine(x, U, c, work):
    # projection of x onto {U_w z = c_w} with its multipliers
    if not work:
        return np.zeros(0), x.copy()
    Uw = U[work]
    mu = np.linalg.lstsq(Uw @ Uw.T, Uw @ x - c[work], rcond=None)[0]
    return mu, x - Uw.T @ mu


def _certified(x, A, U, c, free, work, tol, norms):
    mu, z = _affine(x, U, c, work)
    resid = U @ z - c
    resid[free] = np.abs(resid[free])
    wfree = free[work] if work else np.zeros(0, dtype=bool)
    if np.max(resid) > tol or np.any(mu[~wfree] < -tol):
        return None
    lam = np.zeros(A.shape[0])
    lam[work] = np.where(wfree, mu, np.maximum(mu, 0.0)) / norms[work]
    return z, lam


def _independent(unit, work, i, tol=1e-8) -> bool:
    if not work:
        return True
    if len(work) >= unit.shape[1]:
        return False
    Q = np.linalg.qr(unit[work].T)[0]
    r = unit[i] - Q @ (Q.T @ unit[i])
    return float(np.linalg.norm(r)) > tol


def _dual_value(x, A, b, lam) -> float:
    w = A.T @ lam
    return float(-0.5 * w @ w + lam @ (A @ x - b))


_RUNNING, _CONVERGED, _PRUNED, _DIVERGED = 0, 1, 2, 3
_CODES = {_CONVERGED: FEASIBLE, _PRUNED: PRUNED, _DIVERGED: INFEASIBLE}
_GRAM_BUDGET = 4_000_000  # memoized Gram entries per solve


@njit(cache=True)
def _gca_steps(A, s, n2, free, lam, grad, w, acc, gram, have, use_gram,
               n_steps, tol_step, cap, div_bound, dist_bound):
    # up to n_steps greedy coordinate updates, state mutated in place
    m, d = A.shape
    for step_no in range(n_steps):
        j = -1
        best = 0.0
        for i in range(m):
            if free[i]:
                st = grad[i]
            else:
                st = max(lam[i] + grad[i], 0.0) - lam[i]
            if abs(st) > best:
                best = abs(st)
                j = i
        if j < 0 or best <= tol_step:
            return _CONVERGED, step_no
        new = lam[j] + grad[j] / n2[j]
        if not free[j] and new < 0.0:
            new = 0.0
        delta = new - lam[j]
        acc[0] += delta * grad[j] - 0.5 * delta * delta * n2[j]
        if use_gram:
            if not have[j]:
                for i in range(m):
                    t = 0.0
                    for c in range(d):
                        t += A[i, c] * A[j, c]
                    gram[i, j] = t
                have[j] = True
            for i in range(m):
                grad[i] -= delta * gram[i, j]
        else:
            for i in range(m):
                t = 0.0
                for c in range(d):
                    t += A[i, c] * A[j, c]
                grad[i] -= delta * t
        lam[j] = new
        wn = 0.0
        for c in range(d):
            w[c] += delta * A[j, c]
            wn += w[c] * w[c]
        acc[1] += delta * s[j]
        # weak duality: any feasible z has |z - x| >= lam's / |A' lam|
        if wn > 0.0:
            bound = acc[1] / np.sqrt(wn)
        elif acc[1] > 0.0:
            bound = np.inf
        else:
            bound = 0.0
        if bound > cap or 2.0 * acc[0] > cap * cap:
            return _PRUNED, step_no + 1
        if acc[0] > div_bound or bound > dist_bound:
            return _DIVERGED, step_no + 1
    return _RUNNING, n_steps


def gca_project(x, cs: ConstraintSet, eps_cap: float | None = None,
                max_iters: int | None = None,
                options: SolverOptions = DEFAULT_OPTIONS) -> ProjectionResult:
    """Project ``x`` onto ``cs`` by greedy coordinate ascent on the dual.

    Parameters
    ----------
    x : array_like
        Query point.
    cs : ConstraintSet
        Halfspaces and optional equality; must be nonempty.
    eps_cap : float, optional
        Stop with status ``pruned`` once weak duality certifies
        ``dist > eps_cap``.
    max_iters : int, optional
        Overrides ``options.max_iters``.

    Returns
    -------
    ProjectionResult
        ``feasible`` results carry the projection ``z`` and ``dist``.
        ``infeasible`` means the dual diverged past the configured bound.
    """
    x = np.asarray(x, dtype=float)
    A, b, free = _stack(cs)
    A = np.ascontiguousarray(A, dtype=float)
    m = b.shape[0]
    if m == 0:
        raise ValueError("empty constraint set")
    opts = options
    if max_iters is None:
        max_iters = opts.max_iters or max(50 * m, 500)
    tol_geo = 1e-9 * (1.0 + np.linalg.norm(x))
    n2 = np.einsum("ij,ij->i", A, A)
    if np.any(n2 <= 0):
        raise ValueError("constraint with zero normal")
    capped = eps_cap is not None and np.isfinite(eps_cap)
    div_bound = opts.divergence_bound
    if capped:
        div_bound = max(div_bound, 100.0 * eps_cap ** 2)
    dist_bound = np.sqrt(2.0 * div_bound)

    s = A @ x - b
    lam = np.zeros(m)
    grad = s.copy()
    w = np.zeros(A.shape[1])  # A' lam
    acc = np.zeros(2)  # running g(lam) and lam's
    use_gram = m * m <= _GRAM_BUDGET
    gram = np.empty((m, m) if use_gram else (0, 0))
    have = np.zeros(m if use_gram else 0, dtype=np.bool_)
    cap = float(eps_cap) if capped else np.inf
    tried = set()
    last_support = None
    status = BUDGET
    it = 0
    while it < max_iters:
        n_steps = min(opts.window, max_iters - it)
        code, done = _gca_steps(A, s, n2, free, lam, grad, w, acc, gram, have, use_gram,
                                n_steps, opts.tol_step, cap, div_bound, dist_bound)
        it += done
        if code != _RUNNING:
            status = _CODES[code]
            break
        if it % opts.refresh_every < opts.window:
            w[:] = A.T @ lam
            acc[1] = lam @ s
            grad[:] = s - A @ w
        support = tuple(np.flatnonzero(lam > 0))
        # a support that survives a whole window is worth certifying
        if opts.polish and support == last_support and support not in tried:
            tried.add(support)
            hit = _refine(x, A, b, free, lam, tol_geo)
            if hit is _EMPTY:
                status = INFEASIBLE
                break
            if hit is not None:
                return _finish(x, A, b, hit[1], hit[0], it, cs, polished=True)
        last_support = support
    if status in (FEASIBLE, BUDGET) and opts.polish:
        hit = _refine(x, A, b, free, lam, tol_geo)
        if hit is _EMPTY:
            status = INFEASIBLE
        elif hit is not None:
            return _finish(x, A, b, hit[1], hit[0], it, cs, polished=True)
    g = float(acc[0])
    diverged = status == INFEASIBLE
    if status == FEASIBLE:
        z = x - A.T @ lam
        return _finish(x, A, b, lam, z, it, cs)
    if status == BUDGET:
        log.debug("gca budget exhausted after %d iterations (%d rows)", it, m)
    return ProjectionResult(status, None, np.inf, g, it, lam, diverged, False, cs)


def _finish(x, A, b, lam, z, it, cs, polished=False) -> ProjectionResult:
    dist = float(np.linalg.norm(z - x))
    return ProjectionResult(FEASIBLE, z, dist, _dual_value(x, A, b, lam), it, lam,
                            False, polished, cs)


def test_activeness(result: ProjectionResult, cs: ConstraintSet | None = None,
                    tol_feas: float | None = None, tol_cs: float | None = None,
                    x=None) -> bool:
    """Decide whether the constraint set behind ``result`` is nonempty.

    Three checks: the dual did not diverge, the primal residual at ``z``
    vanishes, and complementary slackness holds.  Residuals are measured
    geometrically (divided by row norms).
    """
    if result.diverged or result.status != FEASIBLE or result.z is None:
        return False
    cs = cs if cs is not None else result.constraints
    A, b, free = _stack(cs)
    z = result.z
    scale = 1.0 + np.linalg.norm(z if x is None else x)
    tol_feas = (DEFAULT_OPTIONS.tol_feas if tol_feas is None else tol_feas) * scale
    tol_cs = (DEFAULT_OPTIONS.tol_cs if tol_cs is None else tol_cs) * scale
    norms = np.sqrt(np.einsum("ij,ij->i", A, A))
    resid = (A @ z - b) / norms
    if np.any(resid[~free] > tol_feas) or np.any(np.abs(resid[free]) > tol_feas):
        return False
    lam = result.lam if result.lam is not None else np.zeros(b.shape[0])
    slack = np.abs(lam * norms * resid)
    return bool(np.all(slack[~free] <= tol_cs))


test_activeness.__test__ = False  # not a pytest test despite the name


def hyperplane_distance(x, h) -> float:
    """Distance from ``x`` to the hyperplane (or halfspace boundary) ``h``."""
    a = np.asarray(h.a, dtype=float)
    return abs(float(a @ np.asarray(x, float)) - h.b) / float(np.linalg.norm(a))


def halfspace_distance(x, h: Halfspace) -> float:
    a = np.asarray(h.a, dtype=float)
    return max(float(a @ np.asarray(x, float)) - h.b, 0.0) / float(np.linalg.norm(a))


def candidate_pairs(ds: Dataset, cell, m: int | None = None,
                    cache: NeighborCache | None = None) -> list:
    if m is None:
        return candidate_bisectors_exact(ds, cell)
    return candidate_bisectors_approx(ds, cell, m, cache)


def facet_constraints(ds: Dataset, cell, swap, mode: str = "cell",
                      m: int | None = None, cache: NeighborCache | None = None) -> ConstraintSet:
    """Constraint set whose projection gives the facet (or neighbor cell) distance.

    ``mode="facet"``: halfspaces of ``cell`` plus equality on the swap bisector.
    ``mode="cell"``: halfspaces of the neighbor cell reached through ``swap``.
    ``m=None`` uses all ``k (n - k)`` bisectors, otherwise the approximate set.
    """
    out, inn = swap
    if mode == "facet":
        cs = constraints_for_pairs(ds, candidate_pairs(ds, cell, m, cache))
        return cs.with_equality(bisector_plane(ds, out, inn))
    if mode == "cell":
        nb = neighbor_key(cell, out, inn)
        return constraints_for_pairs(ds, candidate_pairs(ds, nb, m, cache))
    raise ValueError(f"unknown distance mode {mode!r}")


def facet_distance(ds: Dataset, x, cell, swap, mode: str = "cell",
                   m: int | None = None, eps_cap: float | None = None,
                   cache: NeighborCache | None = None,
                   options: SolverOptions = DEFAULT_OPTIONS) -> ProjectionResult:
    """Distance from ``x`` to the facet of ``cell`` across bisector ``swap``
    (``mode="facet"``) or to the neighbor cell itself (``mode="cell"``)."""
    cs = facet_constraints(ds, cell, swap, mode, m, cache)
    return gca_project(x, cs, eps_cap=eps_cap, options=options)


__all__ = [
    "SolverOptions", "ProjectionResult", "gca_project", "test_activeness",
    "hyperplane_distance", "halfspace_distance", "facet_distance",
    "facet_constraints", "Hyperplane", "FEASIBLE", "INFEASIBLE", "BUDGET", "PRUNED",
]
