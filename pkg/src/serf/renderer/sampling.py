"""Ray sampling: a uniform band around the surface hit plus importance
samples drawn from coarse compositing weights."""

from __future__ import annotations

import numpy as np

from ..geometry import TriangleMesh, raycast
from .compositing import composite_weights_np


def band_t_values(t0, half_width: float, n: int, rng: np.random.Generator | None = None):
    """n samples in [t0 - h, t0 + h] per ray; evenly spaced when rng is None,
    stratified-random otherwise. t0 may be scalar or (R,)."""
    t0 = np.atleast_1d(np.asarray(t0, dtype=np.float64))
    lo = t0 - half_width
    if rng is None:
        frac = np.linspace(0.0, 1.0, n)
    else:
        cell = (np.arange(n) + 0.0) / n
        frac = cell[None, :] + rng.uniform(size=(len(t0), n)) / n
    t = lo[:, None] + frac * (2.0 * half_width)
    return np.maximum(t, 1e-9)


def sample_pdf(t_bins: np.ndarray, weights: np.ndarray, n: int,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Inverse-CDF samples from the piecewise-constant pdf over intervals.

    t_bins (R, S) sorted; weights (R, S-1) nonnegative. Deterministic
    midpoint u-values when rng is None.
    """
    t_bins = np.atleast_2d(t_bins)
    weights = np.atleast_2d(weights) + 1e-9
    r, s1 = weights.shape
    pdf = weights / weights.sum(axis=1, keepdims=True)
    cdf = np.concatenate([np.zeros((r, 1)), np.cumsum(pdf, axis=1)], axis=1)  # (R, S)
    if rng is None:
        u = np.broadcast_to(np.linspace(0.5 / n, 1.0 - 0.5 / n, n), (r, n)).copy()
    else:
        u = rng.uniform(size=(r, n))
    # Row-offset trick makes one flat searchsorted handle all rays.
    offs = 2.0 * np.arange(r)[:, None]
    idx = np.searchsorted((cdf + offs).ravel(), (u + offs).ravel(), side="right")
    idx = idx.reshape(r, n) - np.arange(r)[:, None] * (s1 + 1)
    idx = np.clip(idx, 1, s1) - 1  # interval index
    c0 = np.take_along_axis(cdf, idx, axis=1)
    c1 = np.take_along_axis(cdf, idx + 1, axis=1)
    b0 = np.take_along_axis(t_bins, idx, axis=1)
    b1 = np.take_along_axis(t_bins, idx + 1, axis=1)
    denom = np.where(c1 - c0 < 1e-12, 1.0, c1 - c0)
    frac = (u - c0) / denom
    return b0 + frac * (b1 - b0)


def ray_bbox_range(mesh: TriangleMesh, origin, direction):
    """(near, far) of the ray against the mesh bbox, or None on miss."""
    direction = np.asarray(direction, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    inv = np.where(direction != 0, 1.0 / np.where(direction != 0, direction, 1.0), 1e300)
    with np.errstate(over="ignore"):
        t0 = (mesh.bbox_min - origin) * inv
        t1 = (mesh.bbox_max - origin) * inv
    near = float(np.minimum(t0, t1).max())
    far = float(np.maximum(t0, t1).min())
    if near > far or far <= 0:
        return None
    return max(near, 1e-9), far


def sample_ray(mesh: TriangleMesh, origin, direction, coarse_n: int, fine_n: int = 0,
               sdf_fn=None, steepness: float = 20.0,
               band_half_width: float | None = None,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """t values for one ray, strictly sorted; empty array when the ray misses
    the scene bbox entirely (pixel = background).

    On a surface hit, coarse samples cover [t0 - h, t0 + h] with
    h = 3 x mean edge length by default; fine samples are drawn from the
    coarse pass weights (requires `sdf_fn`, mapping (N, 3) points to SDF).
    """
    if np.linalg.norm(direction) == 0:
        raise ValueError("ray direction must be nonzero")
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    hit = raycast(mesh, origin, direction)
    if hit is None:
        rng_range = ray_bbox_range(mesh, origin, direction)
        if rng_range is None:
            return np.zeros(0)
        near, far = rng_range
        frac = np.linspace(0.0, 1.0, coarse_n) if rng is None else np.sort(rng.uniform(size=coarse_n))
        return np.unique(near + frac * (far - near))
    half = band_half_width if band_half_width is not None else 3.0 * mesh.mean_edge_length()
    coarse = band_t_values(hit.t, half, coarse_n, rng)[0]
    if fine_n <= 0:
        return np.unique(coarse)
    if sdf_fn is None:
        raise ValueError("fine sampling requires sdf_fn")
    pts = origin[None] + coarse[:, None] * direction[None]
    sdf = np.asarray(sdf_fn(pts), dtype=np.float64).reshape(-1)
    w = composite_weights_np(sdf[None], steepness)[0]
    fine = sample_pdf(coarse[None], w[None], fine_n, rng)[0]
    return np.unique(np.concatenate([coarse, fine]))
