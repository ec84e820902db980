import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import load_fourclass
from voradv.data import Dataset, SplitSpec, jitter, normalize_minmax, split
from voradv.knn import (NeighborCache, cell_is_adversarial, classify, classify_many,
                        knn_indices, m_nearest, vote)


def line(*xs, labels=None):
    X = np.array([[x, 0.0] for x in xs])
    return Dataset(X, labels if labels is not None else [0] * len(xs), 2)


def sort_oracle(X, x, k):
    d = [float(np.sum((p - x) ** 2)) for p in X]
    return tuple(sorted(sorted(range(len(X)), key=lambda i: (d[i], i))[:k]))


def test_knn_examples():
    ds = line(0.0, 1.0, 3.0)
    assert knn_indices(ds, [0.1, 0.0], 2) == (0, 1)
    assert knn_indices(ds, [3.0, 0.0], 1) == (2,)
    with pytest.raises(ValueError):
        knn_indices(ds, [0.0, 0.0], 4)


@given(st.integers(0, 10_000), st.integers(1, 50))
def test_knn_matches_sort(seed, k):
    rng = np.random.default_rng(seed)
    X = rng.random((50, 4))
    ds = Dataset(X, rng.integers(0, 2, 50), 2)
    x = rng.random(4)
    assert knn_indices(ds, x, k) == sort_oracle(X, x, k)


def test_vote_examples():
    ds = line(0, 1, 2, labels=[0, 0, 1])
    assert vote(ds, (0, 1, 2)).winner == 0
    assert classify(line(0, 5, labels=[1, 0]), [0.4, 0.0], 1) == 1


def test_vote_tie_uses_distance():
    ds = line(0.0, 1.0, labels=[0, 1])
    assert vote(ds, (0, 1), [0.9, 0.0]).winner == 1
    assert vote(ds, (0, 1), [0.1, 0.0]).winner == 0
    assert vote(ds, (0, 1)).winner == 0


def test_cell_is_adversarial_examples():
    ds = line(0, 1, 2, labels=[0, 0, 1])
    assert not cell_is_adversarial(ds, (0, 1, 2), 0)
    ds = line(0, 1, 2, labels=[0, 1, 1])
    assert cell_is_adversarial(ds, (0, 1, 2), 0)


@given(st.integers(0, 10_000), st.sampled_from([1, 3, 5]))
def test_cell_adversarial_consistent_with_classify(seed, k):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.random((15, 3)), rng.integers(0, 2, 15), 2)
    for x in rng.random((10, 3)):
        pred = classify(ds, x, k)
        for y in (0, 1):
            assert cell_is_adversarial(ds, knn_indices(ds, x, k), y) == (pred != y)


@given(st.integers(0, 10_000))
def test_classify_many_matches_classify(seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.random((20, 2)), rng.integers(0, 3, 20), 3)
    Z = rng.random((15, 2))
    assert classify_many(ds, Z, 3).tolist() == [classify(ds, z, 3) for z in Z]


def test_m_nearest_examples():
    ds = line(0, 1, 2, 3)
    assert m_nearest(ds, 0, 2) == [1, 2]
    # exclusion is applied after picking the m nearest
    assert m_nearest(ds, 0, 2, exclude={1}) == [2]


@given(st.integers(0, 10_000), st.integers(1, 19))
def test_m_nearest_matches_sort(seed, m):
    rng = np.random.default_rng(seed)
    X = rng.random((20, 3))
    ds = Dataset(X, np.zeros(20, int), 2)
    d = np.sum((X - X[0]) ** 2, axis=1)
    expected = sorted(range(1, 20), key=lambda j: (d[j], j))[:m]
    assert m_nearest(ds, 0, m) == expected
    assert NeighborCache(ds).nearest(0, m) == expected


def test_fourclass_accuracy_k5():
    # held-out accuracy of 5-NN is reported as 1.000 on this dataset
    ds = load_fourclass()
    train, test = split(ds, SplitSpec(seed=0, num_test=200))
    gen, params = normalize_minmax(ds.subset(train))
    gen = jitter(gen)
    pred = classify_many(gen, params.apply(ds.points[test]), 5)
    assert np.mean(pred == ds.labels[test]) >= 0.98
