import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogids.errors import SchemaError
from fogids.learners import is_distribution, predict_knn, train_knn
from conftest import make_matrix
from oracles import knn_votes


def test_k1_exact_row():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    m = train_knn(make_matrix(X, [0, 1, 2]), k=1)
    assert predict_knn(m, X[1]).tolist() == [0.0, 1.0, 0.0]


def test_k3_hand_dataset():
    X = [[0.0], [1.0], [2.0], [10.0], [11.0]]
    y = [0, 0, 1, 1, 1]
    m = train_knn(make_matrix(X, y), k=3)
    for q in ([0.4], [1.5], [6.0], [10.6]):
        expected = knn_votes(X, y, q, 3, 2)
        assert predict_knn(m, np.array(q)).tolist() == expected
    # hand count: nearest to 1.5 are rows 1, 2 (d=0.25) then row 0 (2.25)
    assert predict_knn(m, np.array([1.5])).tolist() == [2 / 3, 1 / 3]


def test_k_equals_n_gives_class_frequencies():
    y = [0, 1, 1, 2, 2, 2]
    m = train_knn(make_matrix(np.arange(6.0), y), k=6)
    assert predict_knn(m, np.array([100.0])).tolist() == [1 / 6, 2 / 6, 3 / 6]


def test_distance_tie_lower_index():
    X = [[-1.0], [1.0]]
    m = train_knn(make_matrix(X, [1, 0]), k=1)
    assert predict_knn(m, np.array([0.0])).tolist() == [0.0, 1.0]


def test_invalid_k():
    data = make_matrix([[0.0], [1.0]], [0, 1])
    with pytest.raises(ValueError):
        train_knn(data, k=0)
    with pytest.raises(ValueError):
        train_knn(data, k=3)


def test_width_mismatch():
    m = train_knn(make_matrix([[0.0], [1.0]], [0, 1]), k=1)
    with pytest.raises(SchemaError):
        predict_knn(m, np.array([0.0, 1.0]))


def test_training_matrix_is_read_only():
    X = np.array([[0.0], [1.0]])
    m = train_knn(make_matrix(X, [0, 1]), k=1)
    X[0, 0] = 99.0
    assert m.X[0, 0] == 0.0
    with pytest.raises(ValueError):
        m.X[0, 0] = 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 40), st.integers(1, 6), st.sampled_from([1, 3, 5]))
def test_matches_brute_force(seed, n, d, k):
    rng = np.random.default_rng(seed)
    # coarse grid values force many exact distance ties
    X = rng.integers(0, 3, (n, d)).astype(float)
    y = rng.integers(0, 3, n)
    k = min(k, n)
    m = train_knn(make_matrix(X, y, n_classes=3), k=k)
    Q = rng.integers(0, 3, (5, d)).astype(float)
    got = m.predict_proba(Q)
    for q, row in zip(Q, got):
        assert row.tolist() == knn_votes(X.tolist(), y.tolist(), q.tolist(), k, 3)
        assert is_distribution(row)


def test_large_magnitudes_exact():
    # raw (un-normalised) traffic features reach 1e9; screening must stay exact
    rng = np.random.default_rng(7)
    X = rng.integers(0, 3, (120, 6)).astype(float)
    X[:, 0] *= 1e9
    X[:, 1] += rng.random(120) * 1e-3
    y = rng.integers(0, 2, 120)
    m = train_knn(make_matrix(X, y), k=5)
    Q = X[:20] + rng.integers(0, 2, (20, 6)) * 1e-4
    for q, row in zip(Q, m.predict_proba(Q)):
        assert row.tolist() == knn_votes(X.tolist(), y.tolist(), q.tolist(), 5, 2)
