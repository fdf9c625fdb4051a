"""K-nearest-neighbor queries with deterministic tie handling."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


class KnnIndex:
    """Spatial index over a fixed point set.

    Backed by a kd-tree; queries return exactly min(K, N) neighbors with
    nondecreasing distances, ties broken by lower point index so results are
    identical across platforms.
    """

    def __init__(self, points: np.ndarray):
        points = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        if points.ndim != 2 or points.shape[0] == 0:
            raise ValueError("point set must be a nonempty (N, D) array")
        self.points = points
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: np.ndarray, k: int):
        """Return (indices (Q, k'), distances (Q, k')) with k' = min(k, N).

        Rows are sorted by (distance, index) ascending.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n = len(self.points)
        k_eff = min(k, n)
        kk = min(n, k_eff + 4)
        while True:
            dist, idx = self._tree.query(queries, k=kk)
            if kk == 1:
                dist = dist[:, None]
                idx = idx[:, None]
            if kk == n:
                break
            # Expand until the boundary distance is strictly larger than the
            # k-th, so every tie at the cut is present before tie-breaking.
            if (dist[:, kk - 1] > dist[:, k_eff - 1]).all():
                break
            kk = min(n, kk * 2)
        order = np.lexsort((idx, dist), axis=1)
        rows = np.arange(len(queries))[:, None]
        return idx[rows, order][:, :k_eff], dist[rows, order][:, :k_eff]

    def query_fast(self, queries: np.ndarray, k: int):
        """Plain kd-tree query without the boundary-tie pass (hot paths where
        exact-tie ordering cannot matter)."""
        k_eff = min(k, len(self.points))
        dist, idx = self._tree.query(np.atleast_2d(queries), k=k_eff)
        if k_eff == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        return idx, dist

    def query_one(self, point: np.ndarray, k: int):
        idx, dist = self.query(np.asarray(point, dtype=np.float64)[None], k)
        return idx[0], dist[0]


def build_knn_index(points: np.ndarray) -> KnnIndex:
    return KnnIndex(points)


def knn_query(index: KnnIndex, query: np.ndarray, k: int):
    """K nearest (point index, distance) pairs, distances nondecreasing."""
    return index.query_one(query, k)
