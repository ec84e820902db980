from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from voradv.data import Dataset
from voradv.geometry import ConstraintSet, Hyperplane, bisector_plane
from voradv.knn import knn_indices
from voradv.oracle import ldp_project, reference_project
from voradv.qp import (BUDGET, FEASIBLE, INFEASIBLE, PRUNED, facet_distance, gca_project,
                       hyperplane_distance, test_activeness as activeness)


def random_cs(seed, m_max=6, d_max=4, equality=False):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, d_max + 1))
    m = int(rng.integers(1, m_max + 1))
    A = rng.normal(size=(m, d))
    b = rng.normal(size=m)
    eq = Hyperplane(rng.normal(size=d), float(rng.normal())) if equality else None
    return rng.normal(scale=2.0, size=d), ConstraintSet(A, b, equality=eq)


def kkt_enumeration(x, cs):
    """Smallest-distance feasible KKT point over every active subset."""
    A, b = cs.A, cs.b
    best = np.inf
    d = x.shape[0]
    for r in range(0, min(len(b), d) + 1):
        for S in combinations(range(len(b)), r):
            As, bs = A[list(S)], b[list(S)]
            if r:
                G = As @ As.T
                if np.linalg.matrix_rank(G) < r:
                    continue
                mu = np.linalg.solve(G, As @ x - bs)
                if np.any(mu < -1e-12):
                    continue
                z = x - As.T @ mu
            else:
                z = x
            if np.all(A @ z - b <= 1e-9):
                best = min(best, float(np.linalg.norm(z - x)))
    return best


def box_vertex_feasible(cs, half_width=1e3):
    """Feasibility by enumerating vertices of the polytope cut by a box."""
    d = cs.dim
    A = np.vstack([cs.A, np.eye(d), -np.eye(d)])
    b = np.concatenate([cs.b, np.full(2 * d, half_width)])
    for S in combinations(range(A.shape[0]), d):
        M = A[list(S)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, b[list(S)])
        if np.all(A @ v - b <= 1e-9 * (1 + np.abs(b))):
            return True
    return False


def test_single_halfspace():
    cs = ConstraintSet(np.array([[1.0, 0.0]]), np.array([1.0]))
    res = gca_project([2.0, 0.0], cs)
    assert res.status == FEASIBLE
    np.testing.assert_allclose(res.z, [1.0, 0.0], atol=1e-12)
    assert res.dist == pytest.approx(1.0)
    # lambda = (a.x - b) / |a|^2 = 1
    assert res.lam[0] == pytest.approx(1.0)


def test_interior_point():
    cs = ConstraintSet(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1.0, 1.0]))
    res = gca_project([0.0, 0.0], cs)
    assert res.dist == 0.0 and np.all(res.lam == 0.0)
    assert activeness(res, cs)


def test_facet_equality_example():
    cs = ConstraintSet(np.eye(2), np.ones(2), equality=Hyperplane(np.array([1.0, 0.0]), 1.0))
    res = gca_project([0.0, 0.0], cs)
    np.testing.assert_allclose(res.z, [1.0, 0.0], atol=1e-9)
    assert res.dist == pytest.approx(1.0)


def test_inactive_bisector():
    cs = ConstraintSet(np.array([[1.0, 0.0]]), np.array([0.0]),
                       equality=Hyperplane(np.array([1.0, 0.0]), 1.0))
    res = gca_project([0.0, 0.0], cs)
    assert res.status == INFEASIBLE
    assert not activeness(res, cs)


def test_empty_constraint_set_rejected():
    with pytest.raises(ValueError):
        gca_project([0.0], ConstraintSet(np.zeros((0, 1)), np.zeros(0)))


@given(st.integers(0, 100_000))
def test_matches_active_set_enumeration(seed):
    x, cs = random_cs(seed)
    expected = kkt_enumeration(x, cs)
    res = gca_project(x, cs)
    if np.isfinite(expected):
        assert res.status == FEASIBLE
        assert res.dist == pytest.approx(expected, abs=1e-6)
    else:
        assert res.status != FEASIBLE


@given(st.integers(0, 100_000))
def test_weak_duality_and_kkt(seed):
    x, cs = random_cs(seed, m_max=10)
    res = gca_project(x, cs)
    if res.status != FEASIBLE:
        return
    # dual value never exceeds the primal objective
    assert res.dual_value <= 0.5 * res.dist ** 2 + 1e-9
    assert np.all(res.lam >= 0)
    slack = cs.A @ res.z - cs.b
    assert np.max(slack) <= 1e-6 * (1 + np.linalg.norm(x))
    assert np.max(np.abs(res.lam * slack)) <= 1e-6 * (1 + np.linalg.norm(x))
    np.testing.assert_allclose(res.z, x - cs.A.T @ res.lam, atol=1e-8)


@given(st.integers(0, 100_000))
def test_dual_objective_monotone(seed):
    x, cs = random_cs(seed, m_max=8)
    values = []
    for budget in (1, 2, 4, 8, 16, 32):
        res = gca_project(x, cs, max_iters=budget)
        if res.status in (BUDGET, FEASIBLE) and not res.polished:
            values.append(res.dual_value)
    assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))


@given(st.integers(0, 100_000), st.floats(0.01, 3.0))
def test_pruning_sound(seed, cap):
    x, cs = random_cs(seed, m_max=8)
    res = gca_project(x, cs, eps_cap=cap)
    if res.status == PRUNED:
        ref = ldp_project(x, cs)
        assert not ref.feasible or ref.dist > cap - 1e-9


@given(st.integers(0, 100_000))
def test_solution_sparse(seed):
    x, cs = random_cs(seed, m_max=12, d_max=3)
    res = gca_project(x, cs)
    if res.status == FEASIBLE:
        assert np.count_nonzero(res.lam > 1e-12) <= cs.dim


@given(st.integers(0, 100_000))
def test_activeness_matches_vertex_enumeration(seed):
    x, cs = random_cs(seed, m_max=8, d_max=3)
    res = gca_project(x, cs)
    assert activeness(res, cs) == box_vertex_feasible(cs)


@given(st.integers(0, 100_000))
def test_agrees_with_reference_under_equality(seed):
    x, cs = random_cs(seed, m_max=6, d_max=4, equality=True)
    ref = reference_project(x, cs)
    res = gca_project(x, cs)
    assert activeness(res, cs) == ref.feasible
    if ref.feasible:
        assert res.dist == pytest.approx(ref.dist, abs=1e-6)


def test_hyperplane_distance_examples():
    h = Hyperplane(np.array([1.0, 0.0]), 1.0)
    assert hyperplane_distance([0.0, 0.0], h) == 1.0
    assert hyperplane_distance([1.0, 7.0], h) == 0.0


@given(st.integers(0, 100_000))
def test_hyperplane_distance_bounds_facet(seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.random((10, 2)), rng.integers(0, 2, 10), 2)
    x = rng.random(2)
    cell = knn_indices(ds, x, 3)
    for out in cell:
        for inn in set(range(10)) - set(cell):
            res = facet_distance(ds, x, cell, (out, inn), mode="facet")
            if activeness(res):
                assert hyperplane_distance(x, bisector_plane(ds, out, inn)) <= res.dist + 1e-9
