"""Ray-triangle intersection: a median-split BVH for single rays and a
vectorized brute-force path for image-sized ray batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-9


@dataclass(frozen=True)
class RayHit:
    t: float
    face_index: int
    barycentric: np.ndarray  # (3,) weights for the face's three vertices

    def __post_init__(self):
        object.__setattr__(self, "barycentric", np.asarray(self.barycentric, dtype=np.float64))


def _triangle_intersect(origins, dirs, v0, v1, v2):
    """Moller-Trumbore for broadcastable ray/triangle arrays.

    Returns (t, u, v, hit_mask); u, v are barycentric weights of vertices 1
    and 2. Rays and triangles broadcast against each other.
    """
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(dirs, e2)
    det = np.sum(e1 * pvec, axis=-1)
    ok = np.abs(det) > _EPS
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins - v0
    u = np.sum(tvec * pvec, axis=-1) * inv_det
    qvec = np.cross(tvec, e1)
    v = np.sum(dirs * qvec, axis=-1) * inv_det
    t = np.sum(e2 * qvec, axis=-1) * inv_det
    hit = ok & (u >= -_EPS) & (v >= -_EPS) & (u + v <= 1.0 + _EPS) & (t > _EPS)
    return t, u, v, hit


class Bvh:
    """Median-split bounding volume hierarchy over mesh triangles."""

    LEAF_SIZE = 4

    def __init__(self, mesh):
        self.mesh = mesh
        f = mesh.faces
        v = mesh.vertices
        tri = v[f]  # (F, 3, 3)
        self._tri = tri
        lo = tri.min(axis=1)
        hi = tri.max(axis=1)
        centroids = tri.mean(axis=1)

        nf = len(f)
        order = np.arange(nf)
        # Flat node arrays, built by an explicit stack of (start, end) ranges.
        bounds_min, bounds_max = [], []
        left, right = [], []
        starts, counts = [], []

        def push_node():
            bounds_min.append(np.zeros(3))
            bounds_max.append(np.zeros(3))
            left.append(-1)
            right.append(-1)
            starts.append(-1)
            counts.append(0)
            return len(left) - 1

        root = push_node()
        stack = [(root, 0, nf)]
        while stack:
            node, s, e = stack.pop()
            ids = order[s:e]
            bounds_min[node] = lo[ids].min(axis=0) if len(ids) else np.zeros(3)
            bounds_max[node] = hi[ids].max(axis=0) if len(ids) else np.zeros(3)
            if e - s <= self.LEAF_SIZE:
                starts[node] = s
                counts[node] = e - s
                continue
            cen = centroids[ids]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            # Deterministic median split; ties resolved by face index.
            key = np.lexsort((ids, cen[:, axis]))
            order[s:e] = ids[key]
            mid = s + (e - s) // 2
            lchild = push_node()
            rchild = push_node()
            left[node] = lchild
            right[node] = rchild
            stack.append((lchild, s, mid))
            stack.append((rchild, mid, e))

        self.order = order
        self.bounds_min = np.array(bounds_min)
        self.bounds_max = np.array(bounds_max)
        self.left = np.array(left)
        self.right = np.array(right)
        self.starts = np.array(starts)
        self.counts = np.array(counts)

    def _slab(self, node, origin, inv_dir, best_t):
        with np.errstate(over="ignore"):
            t0 = (self.bounds_min[node] - origin) * inv_dir
            t1 = (self.bounds_max[node] - origin) * inv_dir
        near = np.minimum(t0, t1).max()
        far = np.maximum(t0, t1).min()
        return near <= far + _EPS and far > _EPS and near < best_t

    def raycast(self, origin, direction) -> RayHit | None:
        origin = np.asarray(origin, dtype=np.float64)
        direction = np.asarray(direction, dtype=np.float64)
        if np.linalg.norm(direction) == 0:
            raise ValueError("ray direction must be nonzero")
        # Finite sentinel instead of inf keeps 0 * inv from producing NaN in
        # the slab test when the origin lies on a bound.
        inv_dir = np.where(direction != 0, 1.0 / np.where(direction != 0, direction, 1.0), 1e300)
        best_t = np.inf
        best_face = -1
        best_uv = (0.0, 0.0)
        stack = [0]
        while stack:
            node = stack.pop()
            if not self._slab(node, origin, inv_dir, best_t):
                continue
            if self.counts[node] > 0:
                s = self.starts[node]
                ids = self.order[s : s + self.counts[node]]
                tri = self._tri[ids]
                t, u, v, hit = _triangle_intersect(
                    origin[None], direction[None], tri[:, 0], tri[:, 1], tri[:, 2]
                )
                for j in np.flatnonzero(hit):
                    fj = int(ids[j])
                    if t[j] < best_t or (t[j] == best_t and fj < best_face):
                        best_t = float(t[j])
                        best_face = fj
                        best_uv = (float(u[j]), float(v[j]))
            else:
                stack.append(self.left[node])
                stack.append(self.right[node])
        if best_face < 0:
            return None
        u, v = best_uv
        return RayHit(t=best_t, face_index=best_face, barycentric=np.array([1.0 - u - v, u, v]))


def raycast(mesh, origin, direction) -> RayHit | None:
    """Nearest positive-t hit of a single ray, or None on miss."""
    return mesh.bvh().raycast(origin, direction)


def raycast_batch(mesh, origins, dirs, ray_chunk: int = 512):
    """Nearest hits for many rays at once (vectorized over all triangles).

    Returns (t (N,), face (N,), bary (N, 3)); misses carry t = inf, face = -1.
    `origins` may be a single (3,) origin shared by all rays.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    origins = np.asarray(origins, dtype=np.float64)
    if origins.ndim == 1:
        origins = np.broadcast_to(origins, dirs.shape)
    n = len(dirs)
    tri = mesh.vertices[mesh.faces]
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]

    out_t = np.full(n, np.inf)
    out_face = np.full(n, -1, dtype=np.int64)
    out_bary = np.zeros((n, 3))
    for s in range(0, n, ray_chunk):
        e = min(n, s + ray_chunk)
        o = origins[s:e, None, :]
        d = dirs[s:e, None, :]
        t, u, v, hit = _triangle_intersect(o, d, v0[None], v1[None], v2[None])
        t = np.where(hit, t, np.inf)
        best = np.argmin(t, axis=1)  # first (lowest face id) among exact ties
        rows = np.arange(e - s)
        tb = t[rows, best]
        found = np.isfinite(tb)
        out_t[s:e] = tb
        out_face[s:e][found] = best[found]
        ub = u[rows, best]
        vb = v[rows, best]
        out_bary[s:e] = np.stack([1.0 - ub - vb, ub, vb], axis=1)
        out_bary[s:e][~found] = 0.0
    return out_t, out_face, out_bary
