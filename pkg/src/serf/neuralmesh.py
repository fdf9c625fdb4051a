"""Per-vertex feature construction: render mesh depth per view, back-project
pixel features into neural points, and aggregate them onto mesh vertices with
inverse-distance weights over the K nearest points."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .geometry import CameraModel, KnnIndex, TriangleMesh, raycast_batch

DISTANCE_CLAMP_SCALE = 1e-6  # delta = scale * bbox diagonal


@dataclass
class NeuralPointSet:
    positions: np.ndarray  # (N, 3)
    features: np.ndarray  # (N, D)
    source_view: np.ndarray  # (N,) int
    appearance_dim: int | None = None  # leading feature columns; rest = geometry

    def __post_init__(self):
        if len(self.positions) != len(self.features):
            raise ValueError("positions/features length mismatch")
        if self.appearance_dim is None:
            self.appearance_dim = self.features.shape[1]

    def __len__(self):
        return len(self.positions)

    @staticmethod
    def concatenate(sets: list["NeuralPointSet"]) -> "NeuralPointSet":
        if not sets:
            raise ValueError("no point sets")
        da = sets[0].appearance_dim
        if any(s.appearance_dim != da or s.features.shape[1] != sets[0].features.shape[1] for s in sets):
            raise ValueError("inconsistent feature dimensions across views")
        return NeuralPointSet(
            positions=np.concatenate([s.positions for s in sets]),
            features=np.concatenate([s.features for s in sets]),
            source_view=np.concatenate([s.source_view for s in sets]),
            appearance_dim=da,
        )


@dataclass
class NeuralMesh:
    """Triangle mesh plus per-vertex appearance/geometry feature vectors."""

    mesh: TriangleMesh
    appearance: np.ndarray  # (V, D_a)
    geometry: np.ndarray  # (V, D_g)
    coverage: np.ndarray  # (V,) contributing neural point count
    _vertex_index: KnnIndex | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        nv = self.mesh.num_vertices
        if len(self.appearance) != nv or len(self.geometry) != nv or len(self.coverage) != nv:
            raise ValueError("feature array lengths must equal vertex count")

    @property
    def appearance_dim(self) -> int:
        return self.appearance.shape[1]

    @property
    def geometry_dim(self) -> int:
        return self.geometry.shape[1]

    def vertex_index(self) -> KnnIndex:
        if self._vertex_index is None:
            self._vertex_index = KnnIndex(self.mesh.vertices)
        return self._vertex_index

    def with_mesh(self, mesh: TriangleMesh) -> "NeuralMesh":
        """Same features riding on new geometry (after deformation)."""
        return NeuralMesh(mesh, self.appearance, self.geometry, self.coverage)

    def copy(self) -> "NeuralMesh":
        return NeuralMesh(self.mesh, self.appearance.copy(), self.geometry.copy(), self.coverage.copy())

    def save(self, path) -> None:
        formats.save_neural_mesh_arrays(
            path, self.mesh.vertices, self.mesh.faces, self.appearance, self.geometry, self.coverage
        )

    @classmethod
    def load(cls, path) -> "NeuralMesh":
        v, f, app, geo, cov = formats.load_neural_mesh_arrays(path)
        return cls(TriangleMesh(v, f), app, geo, cov)


def render_depth(mesh: TriangleMesh, camera: CameraModel) -> np.ndarray:
    """Per-pixel camera-space z of the nearest surface hit; NaN on miss."""
    pixels = camera.image_grid_pixels()
    origin, dirs, unit_z = camera.pixel_rays(pixels)
    t, face, _ = raycast_batch(mesh, origin, dirs)
    depth = t * unit_z
    depth[face < 0] = np.nan
    return depth.reshape(camera.height, camera.width)


def render_hit_map(mesh: TriangleMesh, camera: CameraModel):
    """Full raycast buffers for a view: (t, face, barycentric), row-major."""
    pixels = camera.image_grid_pixels()
    origin, dirs, unit_z = camera.pixel_rays(pixels)
    t, face, bary = raycast_batch(mesh, origin, dirs)
    return t, face, bary, unit_z


def backproject_features(feature_map: np.ndarray, depth: np.ndarray,
                         camera: CameraModel, view_id: int = 0) -> NeuralPointSet:
    """One neural point per finite-depth pixel, feature copied from the pixel."""
    feature_map = np.asarray(feature_map, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if feature_map.shape[:2] != depth.shape or depth.shape != (camera.height, camera.width):
        raise ValueError(
            f"feature map {feature_map.shape[:2]}, depth {depth.shape} and camera "
            f"{(camera.height, camera.width)} dimensions must match"
        )
    valid = np.isfinite(depth)
    rows, cols = np.nonzero(valid)
    pixels = np.stack([cols + 0.5, rows + 0.5], axis=1)
    positions = camera.backproject_batch(pixels, depth[valid])
    return NeuralPointSet(
        positions=positions,
        features=feature_map[rows, cols],
        source_view=np.full(len(rows), view_id, dtype=np.int64),
    )


def aggregate_vertex_features(points: NeuralPointSet, mesh: TriangleMesh, k: int,
                              max_distance: float | None = None) -> NeuralMesh:
    """Inverse-distance weighted mean of each vertex's K nearest neural points.

    Weights are 1 / max(dist, delta) with delta = 1e-6 x bbox diagonal, so a
    point coincident with a vertex dominates. With `max_distance` set,
    farther neighbors are dropped; vertices losing all neighbors get zero
    features and coverage 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(points) == 0:
        raise ValueError("empty neural point set")
    features, coverage = weighted_knn_features(
        points.positions, points.features, mesh.vertices, k,
        delta=DISTANCE_CLAMP_SCALE * max(mesh.bbox_diag, 1e-12),
        max_distance=max_distance,
    )
    if (coverage == 0).any():
        warnings.warn(f"{int((coverage == 0).sum())} vertices have no contributing neural points",
                      stacklevel=2)
    da = points.appearance_dim
    return NeuralMesh(mesh, features[:, :da], features[:, da:], coverage)


def weighted_knn_features(positions, values, queries, k, delta, max_distance=None):
    """Shared inverse-distance KNN aggregation; returns (values, coverage)."""
    index = KnnIndex(positions)
    idx, dist = index.query(queries, k)
    w = 1.0 / np.maximum(dist, delta)
    if max_distance is not None:
        w = np.where(dist <= max_distance, w, 0.0)
    coverage = (w > 0).sum(axis=1).astype(np.int64)
    wsum = w.sum(axis=1)
    safe = np.maximum(wsum, 1e-300)
    out = (values[idx] * w[:, :, None]).sum(axis=1) / safe[:, None]
    out[coverage == 0] = 0.0
    return out, coverage


def build_neural_mesh(mesh: TriangleMesh, cameras: list[CameraModel],
                      appearance_maps: list[np.ndarray], geometry_maps: list[np.ndarray],
                      k: int = 8, depths: list[np.ndarray] | None = None) -> NeuralMesh:
    """Full pipeline over all views: depth, back-projection, aggregation."""
    sets = []
    for i, cam in enumerate(cameras):
        depth = depths[i] if depths is not None else render_depth(mesh, cam)
        fmap = np.concatenate([appearance_maps[i], geometry_maps[i]], axis=2)
        s = backproject_features(fmap, depth, cam, view_id=i)
        s.appearance_dim = appearance_maps[i].shape[2]
        sets.append(s)
    merged = NeuralPointSet.concatenate(sets)
    return aggregate_vertex_features(merged, mesh, k)
