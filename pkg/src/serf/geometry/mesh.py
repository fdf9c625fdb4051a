"""Indexed triangle meshes with precomputed adjacency and angle-weighted normals."""

from __future__ import annotations

import warnings

import numpy as np


class MeshValidationError(ValueError):
    """Raised when a mesh violates a structural invariant at construction."""


def _face_geometry(vertices: np.ndarray, faces: np.ndarray):
    """Return (unnormalized face normals, face areas)."""
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    cross = np.cross(b - a, c - a)
    double_area = np.linalg.norm(cross, axis=1)
    return cross, 0.5 * double_area


def compute_vertex_normals(mesh: "TriangleMesh") -> np.ndarray:
    """Angle-weighted vertex normals.

    Each incident face contributes its unit normal scaled by the incident
    corner angle; the sum is normalized. Isolated vertices get a zero
    normal (they are flagged on the mesh).
    """
    verts = mesh.vertices
    faces = mesh.faces
    normals = np.zeros_like(verts)
    fn = mesh.face_normals
    for corner in range(3):
        i = faces[:, corner]
        j = faces[:, (corner + 1) % 3]
        k = faces[:, (corner + 2) % 3]
        e1 = verts[j] - verts[i]
        e2 = verts[k] - verts[i]
        # atan2 form is stable for tiny/obtuse angles and rotation-equivariant
        # to float roundoff, unlike arccos of a clamped dot.
        cross = np.cross(e1, e2)
        angle = np.arctan2(np.linalg.norm(cross, axis=1), (e1 * e2).sum(axis=1))
        np.add.at(normals, i, fn * angle[:, None])
    lengths = np.linalg.norm(normals, axis=1)
    ok = lengths > 1e-20
    normals[ok] /= lengths[ok, None]
    normals[~ok] = 0.0
    return normals


class TriangleMesh:
    """Immutable indexed triangle surface.

    Attributes
    ----------
    vertices : (V, 3) float64
    faces : (F, 3) int64, CCW orientation, outward normals
    vertex_normals : (V, 3) unit angle-weighted normals (zero for isolated vertices)
    face_normals : (F, 3) unit normals
    vertex_faces : list of V int arrays, faces incident to each vertex
    """

    def __init__(self, vertices, faces, validate: bool = True):
        self.vertices = np.ascontiguousarray(np.asarray(vertices, dtype=np.float64))
        self.faces = np.ascontiguousarray(np.asarray(faces, dtype=np.int64))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshValidationError("vertices must be (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshValidationError("faces must be (F, 3)")
        nv = len(self.vertices)
        if validate:
            if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= nv):
                raise MeshValidationError("face index out of range")
            if not np.isfinite(self.vertices).all():
                raise MeshValidationError("non-finite vertex coordinates")

        lo = self.vertices.min(axis=0) if nv else np.zeros(3)
        hi = self.vertices.max(axis=0) if nv else np.zeros(3)
        self.bbox_min = lo
        self.bbox_max = hi
        self.bbox_diag = float(np.linalg.norm(hi - lo))

        cross, areas = _face_geometry(self.vertices, self.faces)
        if validate and self.faces.size:
            min_area = 1e-12 * self.bbox_diag**2
            if (areas <= min_area).any():
                bad = int(np.argmin(areas))
                raise MeshValidationError(f"degenerate face {bad} (area {areas[bad]:g})")
        self.face_areas = areas
        with np.errstate(invalid="ignore", divide="ignore"):
            self.face_normals = cross / np.maximum(2.0 * areas, 1e-300)[:, None]

        counts = np.zeros(nv, dtype=np.int64)
        np.add.at(counts, self.faces.ravel(), 1)
        order = np.argsort(self.faces.ravel(), kind="stable")
        flat_face_ids = np.repeat(np.arange(len(self.faces)), 3)[order]
        splits = np.cumsum(counts)[:-1]
        self.vertex_faces = [np.sort(a) for a in np.split(flat_face_ids, splits)]
        self.isolated_vertices = counts == 0
        if self.isolated_vertices.any():
            warnings.warn(
                f"{int(self.isolated_vertices.sum())} isolated vertices (zero normals)",
                stacklevel=2,
            )

        self.vertex_normals = compute_vertex_normals(self)
        self._edge_cache = None
        self._bvh = None
        self._sdf = None

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def mean_edge_length(self) -> float:
        edges, _ = self.edge_topology()
        d = np.linalg.norm(self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]], axis=1)
        return float(d.mean())

    def edge_topology(self):
        """Unique undirected edges and their incident faces.

        Returns (edges (E,2) sorted pairs, edge_faces list of arrays).
        """
        if self._edge_cache is None:
            raw = np.concatenate(
                [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
            )
            key = np.sort(raw, axis=1)
            face_ids = np.tile(np.arange(len(self.faces)), 3)
            uniq, inverse = np.unique(key, axis=0, return_inverse=True)
            edge_faces = [[] for _ in range(len(uniq))]
            for fid, e in zip(face_ids, inverse):
                edge_faces[e].append(fid)
            edge_faces = [np.array(sorted(fs), dtype=np.int64) for fs in edge_faces]
            self._edge_cache = (uniq, edge_faces)
        return self._edge_cache

    def is_watertight(self) -> bool:
        """True when every edge is shared by exactly two consistently oriented faces."""
        edges, edge_faces = self.edge_topology()
        if any(len(fs) != 2 for fs in edge_faces):
            return False
        # Consistent orientation: each undirected edge must occur once in each
        # direction among the directed face edges.
        directed = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        seen = {}
        for a, b in directed:
            seen[(a, b)] = seen.get((a, b), 0) + 1
        for (a, b), n in seen.items():
            if n != 1 or seen.get((b, a), 0) != 1:
                return False
        return True

    def bvh(self):
        from .raycast import Bvh

        if self._bvh is None:
            self._bvh = Bvh(self)
        return self._bvh

    def distance_field(self):
        from .sdf import MeshDistanceField

        if self._sdf is None:
            self._sdf = MeshDistanceField(self)
        return self._sdf

    def transformed(self, rotation=None, translation=None) -> "TriangleMesh":
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        return TriangleMesh(v, self.faces)

    def with_vertices(self, vertices) -> "TriangleMesh":
        """Same connectivity, new vertex positions (normals recomputed)."""
        return TriangleMesh(vertices, self.faces)
