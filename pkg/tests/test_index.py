import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lomap.errors import ParameterError, ShapeError
from lomap.index import AnnIndex, build_index, exact_knn, knn, recall_at_k


def brute_force(data, q, k):
    """Independent reference: cosine by matrix product, sorted with Python's stable sort."""
    unit = data / np.linalg.norm(data, axis=1, keepdims=True)
    sims = unit @ (q / np.linalg.norm(q))
    return sorted(range(len(data)), key=lambda j: (-sims[j], j))[:k]


def test_full_probe_equals_exact_scan(rng):
    data = rng.standard_normal((400, 6))
    index = build_index(data, 12, seed=1)
    for q in rng.standard_normal((50, 6)):
        a, b = knn(index, q, 7, n_probe=12), exact_knn(data, q, 7)
        np.testing.assert_array_equal(a.ids, b.ids)
        np.testing.assert_array_equal(a.similarities, b.similarities)


def test_exact_scan_agrees_with_brute_force(rng):
    data = rng.standard_normal((100, 4))
    for q in rng.standard_normal((10, 4)):
        assert exact_knn(data, q, 5).ids.tolist() == brute_force(data, q, 5)


def test_ties_break_by_lower_row_id():
    data = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [3.0, 0.0]])
    index = build_index(data, 2, seed=0)
    assert knn(index, np.array([1.0, 0.0]), 3).ids.tolist() == [0, 1, 3]


def test_zero_query_falls_back_to_euclidean(rng):
    data = rng.standard_normal((30, 3))
    index = build_index(data, 4)
    res = knn(index, np.zeros(3), 4)
    assert res.ids.tolist() == np.argsort(np.linalg.norm(data, axis=1), kind="stable")[:4].tolist()
    np.testing.assert_array_equal(res.ids, exact_knn(data, np.zeros(3), 4).ids)


def test_partial_probe_has_good_recall(rng):
    data = rng.standard_normal((2000, 8))
    index = build_index(data, 20, seed=0)
    assert recall_at_k(index, rng.standard_normal((40, 8)), 10, 5) >= 0.7
    assert recall_at_k(index, rng.standard_normal((10, 8)), 10, 20) == 1.0


def test_lists_partition_rows(rng):
    index = build_index(rng.standard_normal((90, 3)), 9, seed=3)
    ids = np.sort(np.concatenate(index.lists))
    np.testing.assert_array_equal(ids, np.arange(90))
    assert index.n_list == 9 and index.size == 90 and index.dim == 3


def test_build_is_deterministic(rng):
    data = rng.standard_normal((120, 5))
    a, b = build_index(data, 8, seed=4), build_index(data, 8, seed=4)
    np.testing.assert_array_equal(a.centroids, b.centroids)


def test_validation(rng):
    data = rng.standard_normal((10, 3))
    with pytest.raises(ParameterError):
        build_index(data, 11)
    with pytest.raises(ParameterError):
        build_index(np.zeros((0, 3)), 1)
    index = build_index(data, 2)
    with pytest.raises(ShapeError):
        knn(index, np.zeros(4), 1)
    with pytest.raises(ParameterError):
        knn(index, np.ones(3), 0)
    with pytest.raises(ParameterError):
        knn(index, np.ones(3), 1, n_probe=3)
    with pytest.raises(ParameterError):
        AnnIndex.from_parts(data, index.centroids, [index.lists[0]])


def test_k_larger_than_dataset_returns_everything(rng):
    data = rng.standard_normal((5, 2))
    assert len(knn(build_index(data, 2), np.ones(2), 50).ids) == 5


@given(seed=st.integers(0, 10**6), n=st.integers(5, 60), n_list=st.integers(1, 5), k=st.integers(1, 8))
def test_full_probe_property(seed, n, n_list, k):
    g = np.random.default_rng(seed)
    # rounded values create exact ties
    data = np.round(g.standard_normal((n, 3)), 1)
    data[np.all(data == 0, axis=1)] = 1.0
    index = build_index(data, n_list, seed=seed)
    q = np.round(g.standard_normal(3), 1)
    np.testing.assert_array_equal(knn(index, q, k).ids, exact_knn(data, q, k).ids)
