"""Pinhole cameras.

Convention (fixed for all file interchange): right-handed, world-to-camera,
+z forward, pixel origin at the top-left corner, pixel (i, j) covers the
square [j, j+1) x [i, i+1) so its center sits at (j + 0.5, i + 0.5) in
continuous pixel coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

CONVENTION = "world_to_camera_rh_z_forward"


class CameraValidationError(ValueError):
    pass


class BehindCameraError(ValueError):
    """Point has non-positive depth in camera space."""


class InvalidDepthError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise CameraValidationError("rotation must be orthonormal with determinant 1")
        if self.fx <= 0 or self.fy <= 0:
            raise CameraValidationError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise CameraValidationError("principal point outside image bounds")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Unit viewing direction (+z of camera frame) in world coordinates."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project_batch(self, points: np.ndarray):
        """Project (N, 3) world points.

        Returns (pixels (N, 2), depth (N,), valid (N,)); invalid entries are
        points at or behind the camera plane (depth <= 0).
        """
        pc = self.to_camera(np.atleast_2d(points))
        z = pc[:, 2]
        valid = z > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            px = self.fx * pc[:, 0] / z + self.cx
            py = self.fy * pc[:, 1] / z + self.cy
        return np.stack([px, py], axis=1), z, valid

    def project(self, point):
        """Project one world point; raises BehindCameraError when z <= 0."""
        pix, z, valid = self.project_batch(np.asarray(point, dtype=np.float64)[None])
        if not valid[0]:
            raise BehindCameraError(f"point has camera depth {z[0]:g}")
        return pix[0], float(z[0])

    def backproject_batch(self, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
        pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        depths = np.asarray(depths, dtype=np.float64).reshape(-1)
        x = (pixels[:, 0] - self.cx) / self.fx * depths
        y = (pixels[:, 1] - self.cy) / self.fy * depths
        cam = np.stack([x, y, depths], axis=1)
        return (cam - self.translation) @ self.rotation

    def backproject(self, pixel, depth: float) -> np.ndarray:
        if not np.isfinite(depth) or depth <= 0:
            raise InvalidDepthError(f"depth must be finite and positive, got {depth!r}")
        return self.backproject_batch(np.asarray(pixel, dtype=np.float64)[None], np.array([depth]))[0]

    def pixel_rays(self, pixels: np.ndarray):
        """World-space rays through continuous pixel coordinates.

        Returns (origin (3,), unit directions (N, 3), camera-space unit z (N,)).
        The last value converts ray parameter t to camera depth: z = t * unit_z.
        """
        pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        d_cam = np.stack(
            [
                (pixels[:, 0] - self.cx) / self.fx,
                (pixels[:, 1] - self.cy) / self.fy,
                np.ones(len(pixels)),
            ],
            axis=1,
        )
        norms = np.linalg.norm(d_cam, axis=1)
        d_world = (d_cam / norms[:, None]) @ self.rotation
        return self.center, d_world, 1.0 / norms

    def image_grid_pixels(self) -> np.ndarray:
        """Pixel-center coordinates for the full frame, row-major (H*W, 2)."""
        xs = np.arange(self.width) + 0.5
        ys = np.arange(self.height) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "R": [float(v) for v in self.rotation.ravel()],
            "t": [float(v) for v in self.translation],
            "convention": CONVENTION,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        conv = d.get("convention", CONVENTION)
        if conv != CONVENTION:
            raise CameraValidationError(f"unsupported camera convention {conv!r}")
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            rotation=np.array(d["R"], dtype=np.float64).reshape(3, 3),
            translation=np.array(d["t"], dtype=np.float64),
            width=int(d["width"]),
            height=int(d["height"]),
        )

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), fx=100.0, fy=None,
                width=128, height=128) -> "CameraModel":
        """Camera at `eye` looking toward `target` (+z forward)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-12:
            up = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
            right = np.cross(fwd, up)
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        r = np.stack([right, down, fwd])  # rows = camera axes in world frame
        return cls(fx=fx, fy=fy if fy is not None else fx, cx=width / 2.0, cy=height / 2.0,
                   rotation=r, translation=-r @ eye, width=width, height=height)


def save_cameras(cameras, path) -> None:
    with open(path, "w") as fh:
        json.dump([c.to_dict() for c in cameras], fh, indent=1)


def load_cameras(path) -> list:
    with open(path) as fh:
        data = json.load(fh)
    return [CameraModel.from_dict(d) for d in data]
