"""Meshes, cameras, and spatial queries."""

from .camera import (
    CONVENTION,
    BehindCameraError,
    CameraModel,
    CameraValidationError,
    InvalidDepthError,
    load_cameras,
    save_cameras,
)
from .knn import KnnIndex, build_knn_index, knn_query
from .mesh import MeshValidationError, TriangleMesh, compute_vertex_normals
from .raycast import Bvh, RayHit, raycast, raycast_batch
from .sdf import MeshDistanceField, signed_distance

__all__ = [
    "CONVENTION",
    "BehindCameraError",
    "Bvh",
    "CameraModel",
    "CameraValidationError",
    "InvalidDepthError",
    "KnnIndex",
    "MeshDistanceField",
    "MeshValidationError",
    "RayHit",
    "TriangleMesh",
    "build_knn_index",
    "compute_vertex_normals",
    "knn_query",
    "load_cameras",
    "raycast",
    "raycast_batch",
    "save_cameras",
    "signed_distance",
]
