"""Mesh signed distance via closest-point queries with pseudonormal sign.

The unsigned distance is exact (closest feature over candidate triangles
pruned by a kd-tree bound). The sign comes from the angle-weighted
pseudonormal of the closest feature: face normal on faces, the mean of the
two incident face normals on edges, and the angle-weighted normal on
vertices. Negative inside for watertight, consistently oriented meshes.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial import cKDTree


class MeshDistanceField:
    def __init__(self, mesh):
        self.mesh = mesh
        v = mesh.vertices
        f = mesh.faces
        self._tri = v[f]
        self._vertex_tree = cKDTree(v)
        centroids = self._tri.mean(axis=1)
        self._centroid_tree = cKDTree(centroids)
        # Max distance from a centroid to its triangle's farthest point bounds
        # how far a relevant face's centroid can be from the query.
        self._face_radius = float(
            np.linalg.norm(self._tri - centroids[:, None, :], axis=2).max()
        ) if len(f) else 0.0

        # Edge ids per (face, slot) where slot k is edge (f[k], f[k+1 mod 3]).
        raw = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        key = np.sort(raw, axis=1)
        uniq, inverse = np.unique(key, axis=0, return_inverse=True)
        nf = len(f)
        self._face_edge_ids = np.stack([inverse[:nf], inverse[nf : 2 * nf], inverse[2 * nf :]], axis=1)
        edge_normals = np.zeros((len(uniq), 3))
        for slot in range(3):
            np.add.at(edge_normals, self._face_edge_ids[:, slot], mesh.face_normals)
        lens = np.linalg.norm(edge_normals, axis=1)
        ok = lens > 1e-20
        edge_normals[ok] /= lens[ok, None]
        self._edge_normals = edge_normals

        self.sign_reliable = mesh.is_watertight()
        if not self.sign_reliable:
            warnings.warn("mesh is open or inconsistently oriented; SDF sign unreliable", stacklevel=2)

    def _candidates(self, queries: np.ndarray):
        """Per-query candidate face lists guaranteed to contain the closest face."""
        nf = len(self.mesh.faces)
        if nf <= 256:
            all_faces = np.arange(nf)
            return [all_faces] * len(queries)
        d_up, _ = self._vertex_tree.query(queries)
        radius = d_up + self._face_radius + 1e-9 * max(self.mesh.bbox_diag, 1.0)
        lists = self._centroid_tree.query_ball_point(queries, radius)
        return [np.asarray(ids, dtype=np.int64) for ids in lists]

    def query(self, points: np.ndarray, return_closest: bool = False):
        """Signed distance for (N, 3) points (or a single (3,) point)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        single = np.asarray(points).ndim == 1
        cand = self._candidates(pts)
        counts = np.array([len(c) for c in cand])
        qid = np.repeat(np.arange(len(pts)), counts)
        fid = np.concatenate(cand) if len(cand) else np.zeros(0, dtype=np.int64)

        q = pts[qid]
        tri = self._tri[fid]
        cp, bary = _closest_point_on_triangles(q, tri)
        sq = ((q - cp) ** 2).sum(axis=1)

        # Winner per query: smallest distance, then lowest face id.
        order = np.lexsort((fid, sq, qid))
        _, first = np.unique(qid[order], return_index=True)
        win = order[first]
        wq, wf, wcp, wbary = qid[win], fid[win], cp[win], bary[win]
        dist = np.sqrt(sq[win])

        normal = self._feature_pseudonormal(wf, wbary)
        side = ((pts[wq] - wcp) * normal).sum(axis=1)
        signed = np.where(side < 0, -dist, dist)
        out = np.full(len(pts), np.nan)
        out[wq] = signed
        if return_closest:
            cp_full = np.full((len(pts), 3), np.nan)
            cp_full[wq] = wcp
            face_full = np.full(len(pts), -1, dtype=np.int64)
            face_full[wq] = wf
            return (out[0], cp_full[0], face_full[0]) if single else (out, cp_full, face_full)
        return float(out[0]) if single else out

    def _feature_pseudonormal(self, faces: np.ndarray, bary: np.ndarray) -> np.ndarray:
        tol = 1e-9
        mesh = self.mesh
        n = mesh.face_normals[faces].copy()
        near_zero = bary <= tol
        kind = near_zero.sum(axis=1)

        on_edge = kind == 1
        if on_edge.any():
            # The zero barycentric identifies the opposite vertex; the edge is
            # the other two. Slot order in _face_edge_ids: 0=(v0,v1), 1=(v1,v2), 2=(v2,v0).
            zero_idx = np.argmax(near_zero[on_edge], axis=1)
            slot = np.choose(zero_idx, [1, 2, 0])  # bary0=0 -> edge (v1,v2) etc.
            eids = self._face_edge_ids[faces[on_edge], slot]
            n[on_edge] = self._edge_normals[eids]

        on_vertex = kind >= 2
        if on_vertex.any():
            corner = np.argmax(bary[on_vertex], axis=1)
            vids = mesh.faces[faces[on_vertex], corner]
            n[on_vertex] = mesh.vertex_normals[vids]
        return n


def _closest_point_on_triangles(q: np.ndarray, tri: np.ndarray):
    """Closest point on each triangle for paired (N, 3) queries and (N, 3, 3) triangles.

    Returns (closest points (N, 3), barycentric coordinates (N, 3)).
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = b - a
    e2 = c - a
    d = q - a
    d11 = (e1 * e1).sum(axis=1)
    d12 = (e1 * e2).sum(axis=1)
    d22 = (e2 * e2).sum(axis=1)
    r1 = (e1 * d).sum(axis=1)
    r2 = (e2 * d).sum(axis=1)
    det = d11 * d22 - d12 * d12
    det = np.where(np.abs(det) < 1e-300, 1e-300, det)
    u = (d22 * r1 - d12 * r2) / det
    v = (d11 * r2 - d12 * r1) / det
    inside = (u >= 0) & (v >= 0) & (u + v <= 1)

    def seg(p0, p1):
        e = p1 - p0
        ee = (e * e).sum(axis=1)
        t = ((q - p0) * e).sum(axis=1) / np.where(ee < 1e-300, 1e-300, ee)
        t = np.clip(t, 0.0, 1.0)
        cp = p0 + t[:, None] * e
        return cp, ((q - cp) ** 2).sum(axis=1), t

    cp_ab, d_ab, t_ab = seg(a, b)
    cp_bc, d_bc, t_bc = seg(b, c)
    cp_ca, d_ca, t_ca = seg(c, a)
    seg_d = np.stack([d_ab, d_bc, d_ca], axis=1)
    best = np.argmin(seg_d, axis=1)
    seg_cp = np.stack([cp_ab, cp_bc, cp_ca], axis=1)[np.arange(len(q)), best]
    # Barycentric of the winning segment point.
    seg_bary = np.zeros((len(q), 3))
    for k, t in enumerate([t_ab, t_bc, t_ca]):
        sel = best == k
        i, j = k, (k + 1) % 3
        seg_bary[sel, i] = 1.0 - t[sel]
        seg_bary[sel, j] = t[sel]

    cp_plane = a + u[:, None] * e1 + v[:, None] * e2
    cp = np.where(inside[:, None], cp_plane, seg_cp)
    bary = np.where(
        inside[:, None],
        np.stack([1.0 - u - v, u, v], axis=1),
        seg_bary,
    )
    return cp, bary


def signed_distance(mesh, point):
    """Signed distance from `point` (or (N, 3) points) to the mesh surface."""
    return mesh.distance_field().query(point)
