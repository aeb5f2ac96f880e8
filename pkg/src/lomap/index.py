"""Inverted-file (IVF) nearest-neighbour index under cosine similarity.

Rows are unit-normalized once; spherical k-means assigns each row to one of
``n_list`` centroids. A query ranks centroids by cosine similarity, scans the
``n_probe`` best lists and returns the top-k rows. Ties are broken by the lower
row id (or list id), so results are deterministic.

Similarities are computed as row-wise ``sum(row * query)`` rather than a matrix
product; the reduction then depends only on the row, so scanning a subset of rows
reproduces the full scan bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, ShapeError

KMEANS_ITERATIONS = 25


class Neighbors(NamedTuple):
    ids: np.ndarray
    similarities: np.ndarray


def _unit_rows(x: np.ndarray):
    norms = np.sqrt(np.einsum("nd,nd->n", x, x))
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[:, None], norms


def _row_sims(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    return (rows * q).sum(axis=1)


def _top_k(ids: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k best scores, descending, ties by ascending id."""
    order = np.lexsort((ids, -scores))
    return order[:k]


def spherical_kmeans(unit: np.ndarray, n_list: int, seed: int, iterations: int = KMEANS_ITERATIONS):
    """Seeded random-row init; empty clusters reseeded to the worst-fitting row."""
    rng = np.random.default_rng(seed)
    n = len(unit)
    centroids = unit[np.sort(rng.choice(n, size=n_list, replace=False))].copy()
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iterations):
        sims = unit @ centroids.T
        assign = np.argmax(sims, axis=1)
        best = sims[np.arange(n), assign]
        counts = np.bincount(assign, minlength=n_list)
        new = np.zeros_like(centroids)
        np.add.at(new, assign, unit)
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmin(best))
            new[c] = unit[far]
            best[far] = np.inf
        norms = np.linalg.norm(new, axis=1)
        new = np.where(norms[:, None] > 0, new / np.where(norms > 0, norms, 1.0)[:, None], centroids)
        if np.array_equal(new, centroids):
            break
        centroids = new
    assign = np.argmax(unit @ centroids.T, axis=1)
    return centroids, assign


@dataclass
class AnnIndex:
    centroids: np.ndarray
    lists: list
    unit_rows: np.ndarray
    norms: np.ndarray
    data: np.ndarray
    seed: int = 0

    @property
    def n_list(self) -> int:
        return len(self.centroids)

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_parts(cls, data, centroids, lists, seed=0) -> "AnnIndex":
        data = np.asarray(data, dtype=float)
        unit, norms = _unit_rows(data)
        lists = [np.asarray(l, dtype=np.int64) for l in lists]
        members = np.concatenate(lists) if lists else np.zeros(0, np.int64)
        if len(members) != len(data) or not np.array_equal(np.sort(members), np.arange(len(data))):
            raise ParameterError("inverted lists must partition the dataset rows")
        return cls(np.asarray(centroids, dtype=float), lists, unit, norms, data, seed)


def build_index(dataset, n_list: int, seed: int = 0) -> AnnIndex:
    data = np.asarray(dataset, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ParameterError("cannot index an empty dataset")
    if not 1 <= n_list <= len(data):
        raise ParameterError(f"n_list must lie in [1, N={len(data)}], got {n_list}")
    unit, norms = _unit_rows(data)
    centroids, assign = spherical_kmeans(unit, n_list, seed)
    order = np.argsort(assign, kind="stable")
    bounds = np.searchsorted(assign[order], np.arange(n_list + 1))
    lists = [order[bounds[c]:bounds[c + 1]] for c in range(n_list)]
    return AnnIndex(centroids, lists, unit, norms, data, seed)


def exact_knn(data, query, k: int) -> Neighbors:
    """Linear scan over every row; the reference the index must agree with."""
    unit, _ = _unit_rows(np.asarray(data, dtype=float))
    q = np.asarray(query, dtype=float)
    qn = np.linalg.norm(q)
    ids = np.arange(len(unit))
    if qn == 0:
        dist = np.linalg.norm(np.asarray(data, dtype=float), axis=1)
        pos = _top_k(ids, -dist, k)
        return Neighbors(ids[pos], -dist[pos])
    sims = _row_sims(unit, q / qn)
    pos = _top_k(ids, sims, k)
    return Neighbors(ids[pos], sims[pos])


def knn(index: AnnIndex, query, k: int, n_probe: int | None = None) -> Neighbors:
    """Top-k rows by cosine similarity among the ``n_probe`` closest lists.

    A zero query has no direction; it falls back to Euclidean distance over all
    rows and reports negative distances in place of similarities.
    """
    q = np.asarray(query, dtype=float)
    if q.shape != (index.dim,):
        raise ShapeError(f"query must have shape ({index.dim},), got {q.shape}")
    if k < 1:
        raise ParameterError("k must be at least 1")
    n_probe = index.n_list if n_probe is None else int(n_probe)
    if not 1 <= n_probe <= index.n_list:
        raise ParameterError(f"n_probe must lie in [1, {index.n_list}]")
    qn = np.linalg.norm(q)
    if qn == 0:
        ids = np.arange(index.size)
        dist = index.norms
        pos = _top_k(ids, -dist, k)
        return Neighbors(ids[pos], -dist[pos])
    q = q / qn
    if n_probe == index.n_list:
        probe = range(index.n_list)
    else:
        csims = _row_sims(index.centroids, q)
        probe = _top_k(np.arange(index.n_list), csims, n_probe)
    ids = np.concatenate([index.lists[c] for c in probe])
    sims = _row_sims(index.unit_rows[ids], q)
    pos = _top_k(ids, sims, k)
    return Neighbors(ids[pos], sims[pos])


def recall_at_k(index: AnnIndex, queries, k: int, n_probe: int) -> float:
    hits = 0
    for q in np.asarray(queries, dtype=float):
        approx = set(knn(index, q, k, n_probe).ids.tolist())
        exact = set(exact_knn(index.data, q, k).ids.tolist())
        hits += len(approx & exact)
    return hits / (k * len(queries))
