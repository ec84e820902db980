from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from voradv.data import Dataset, jitter
from voradv.geometry import ConstraintSet
from voradv.knn import Query, classify
from voradv.oracle import (OracleLimitError, lawson_hanson_nnls, ldp_project,
                           neighbor_pairs_bruteforce, nonempty_cells, oracle_min_distance,
                           random_small_instance, reference_project)
from voradv.search import AttackConfig, best_first_attack


def pair_instance():
    ds = Dataset(np.array([[-1.0, 0.0], [1.0, 0.0]]), [0, 1], 2)
    return ds, Query(np.array([-0.5, 0.0]), 0, 1)


def majority_labels(ds, Z, k):
    # binary plurality of the k nearest generators, computed in one shot
    sq = ((Z[:, None, :] - ds.points[None, :, :]) ** 2).sum(axis=2)
    nn = np.argpartition(sq, k - 1, axis=1)[:, :k]
    return (ds.labels[nn].sum(axis=1) * 2 > k).astype(int)


@given(st.integers(0, 100_000))
def test_nnls_kkt(seed):
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(int(rng.integers(2, 8)), int(rng.integers(1, 10))))
    f = rng.normal(size=E.shape[0])
    w, rnorm = lawson_hanson_nnls(E, f)
    grad = E.T @ (f - E @ w)
    assert np.all(w >= 0)
    assert np.all(grad <= 1e-8)
    assert np.all(np.abs(grad[w > 0]) <= 1e-8)
    assert rnorm == pytest.approx(np.linalg.norm(E @ w - f), abs=1e-10)


def test_reference_examples():
    cs = ConstraintSet(np.array([[1.0, 0.0]]), np.array([1.0]))
    assert reference_project([0.0, 0.0], cs).dist == 0.0
    res = reference_project([3.0, 2.0], cs)
    np.testing.assert_allclose(res.z, [1.0, 2.0])
    empty = ConstraintSet(np.array([[1.0], [-1.0]]), np.array([0.0, -1.0]))
    assert not reference_project([0.0], empty).feasible
    with pytest.raises(OracleLimitError):
        reference_project(np.zeros(2), ConstraintSet(np.ones((30, 2)), np.ones(30)))


@given(st.integers(0, 100_000))
def test_ldp_and_reference_agree(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    m = int(rng.integers(1, 8))
    cs = ConstraintSet(rng.normal(size=(m, d)), rng.normal(size=m))
    x = rng.normal(scale=2.0, size=d)
    a, b = ldp_project(x, cs), reference_project(x, cs)
    assert a.feasible == b.feasible
    if a.feasible:
        assert a.dist == pytest.approx(b.dist, abs=1e-7)


def test_pair_instance_epsilon():
    ds, q = pair_instance()
    res = oracle_min_distance(ds, q)
    assert res.epsilon_star == pytest.approx(0.5)
    assert res.argmin_cell == (1,)


def test_single_class_has_no_adversarial_cell():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.random((8, 2)), np.zeros(8, int), 2)
    res = oracle_min_distance(ds, Query(rng.random(2), 0, 3))
    assert res.epsilon_star == np.inf
    assert res.status == "no_adversarial_cell"


def test_cap_guard():
    ds = Dataset(np.random.default_rng(0).random((30, 2)), np.arange(30) % 2, 2)
    with pytest.raises(OracleLimitError):
        oracle_min_distance(ds, Query(np.zeros(2), 0, 5), cap=1000)


@given(st.integers(0, 10_000))
def test_order1_every_generator_has_a_cell(seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.random((9, 2)), rng.integers(0, 2, 9), 2)
    assert len(nonempty_cells(ds, 1)) == 9


def test_collinear_adjacent_pairs():
    ds = Dataset(np.array([[0.0], [1.0], [2.0]]), [0, 1, 0], 2)
    assert neighbor_pairs_bruteforce(ds, 1) == {((0,), (1,)), ((1,), (2,))}


def test_convex_position_k2_pairs_match_sampling():
    # a shared facet of S+{i} and S+{j} is a stretch of the i-j bisector where
    # S are the nearest points and i, j tie for the next rank
    X = np.array([[0.0, 0.0], [1.0, 0.1], [0.9, 1.0], [-0.1, 0.8]])
    ds = jitter(Dataset(X, [0, 1, 0, 1], 2), 1e-9)
    k = 2
    t = np.linspace(-20.0, 20.0, 400_001)[:, None]
    sampled = set()
    for i, j in combinations(range(4), 2):
        mid = 0.5 * (ds.points[i] + ds.points[j])
        normal = ds.points[j] - ds.points[i]
        Z = mid + t * np.array([-normal[1], normal[0]])
        sq = ((Z[:, None, :] - ds.points[None]) ** 2).sum(axis=2)
        order = np.argsort(sq, axis=1)
        tied = np.sort(order[:, k - 1:k + 1], axis=1)
        hit = (tied[:, 0] == i) & (tied[:, 1] == j)
        for row in np.unique(np.sort(order[hit, :k - 1], axis=1), axis=0):
            rest = tuple(int(v) for v in row)
            a, b = tuple(sorted(rest + (i,))), tuple(sorted(rest + (j,)))
            sampled.add((min(a, b), max(a, b)))
    assert sampled == neighbor_pairs_bruteforce(ds, k)


def test_random_small_instance_is_reproducible():
    a, b = random_small_instance(7), random_small_instance(7)
    assert a.dataset == b.dataset
    np.testing.assert_array_equal(a.query.x, b.query.x)
    assert classify(a.dataset, a.query.x, a.query.k) == a.query.y


def test_matches_exact_search_and_dense_sampling():
    rng = np.random.default_rng(12)
    ds = jitter(Dataset(rng.random((12, 3)), rng.integers(0, 2, 12), 2), 1e-9)
    x = rng.random(3)
    q = Query(x, classify(ds, x, 3), 3)
    res = oracle_min_distance(ds, q)
    cert = best_first_attack(ds, q, AttackConfig(k=3, mode="exact", time_limit=None))
    assert cert.epsilon == pytest.approx(res.epsilon_star, abs=1e-6 * (1 + res.epsilon_star))

    eps = res.epsilon_star
    sampler = np.random.default_rng(0)
    mins = []
    for chunk in range(10):
        u = sampler.normal(size=(100_000, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = 2.0 * eps * sampler.random(100_000) ** (1 / 3)
        Z = x + u * r[:, None]
        wrong = majority_labels(ds, Z, 3) != q.y
        mins.append(float(np.min(r[wrong], initial=np.inf)))
    sandwich = np.minimum.accumulate(mins)
    assert sandwich[-1] >= eps - 1e-9
    assert sandwich[-1] <= sandwich[0]
    assert sandwich[-1] <= 1.05 * eps
