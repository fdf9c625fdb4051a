"""Frame rendering: batches the per-ray pipeline over pixels/tiles."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..geometry import CameraModel, raycast_batch
from ..neuralmesh import NeuralMesh
from .compositing import composite_weights_np
from .fastpath import coarse_sdf_fast, forward_rays_fast
from .network import NetworkParams
from .sampling import band_t_values, ray_bbox_range, sample_pdf


@dataclass
class RenderConfig:
    k: int = 8
    coarse_n: int = 32
    fine_n: int = 32
    band_half_width: float | None = None  # default: 3 x mean edge length
    tile_rays: int = 512
    grad_along_ray: bool = False

    def resolved_band(self, mesh) -> float:
        return self.band_half_width if self.band_half_width is not None else 3.0 * mesh.mean_edge_length()


def _coarse_sdf(params: NetworkParams, nm: NeuralMesh, pts: np.ndarray, k: int) -> np.ndarray:
    return coarse_sdf_fast(params, nm, pts, k)


def sample_hit_rays(params: NetworkParams, nm: NeuralMesh, origins, dirs, t_hits,
                    config: RenderConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """(R, S) sorted t values banded around per-ray hits, with importance
    samples from a no-grad coarse pass when fine_n > 0."""
    half = config.resolved_band(nm.mesh)
    coarse = band_t_values(t_hits, half, config.coarse_n, rng)
    if config.fine_n <= 0:
        return np.sort(coarse, axis=1)
    pts = (origins[:, None, :] + coarse[:, :, None] * dirs[:, None, :]).reshape(-1, 3)
    sdf = _coarse_sdf(params, nm, pts, config.k).reshape(coarse.shape)
    order = np.argsort(coarse, axis=1)
    coarse_sorted = np.take_along_axis(coarse, order, axis=1)
    sdf_sorted = np.take_along_axis(sdf, order, axis=1)
    w = composite_weights_np(sdf_sorted, float(np.exp(params.log_steepness.data)))
    fine = sample_pdf(coarse_sorted, w, config.fine_n, rng)
    return np.sort(np.concatenate([coarse_sorted, fine], axis=1), axis=1)


def render_rays(params: NetworkParams, nm: NeuralMesh, origins, dirs, config: RenderConfig,
                rng: np.random.Generator | None = None):
    """Inference path: returns (rgb (R, 3), expected_t (R,), acc (R,)).

    Rays that miss the scene bbox (and mesh) come back as background.
    """
    frozen = params.constant_view()
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    n = len(dirs)
    rgb = np.zeros((n, 3))
    exp_t = np.full(n, np.nan)
    acc = np.zeros(n)

    t, face, _ = raycast_batch(nm.mesh, origins, dirs)
    hit = face >= 0
    # Rays missing the mesh but crossing its bbox are sampled uniformly there.
    n_samples = config.coarse_n + max(config.fine_n, 0)
    bbox_rows, bbox_t = [], []
    for i in np.flatnonzero(~hit):
        rg = ray_bbox_range(nm.mesh, origins[i], dirs[i])
        if rg is not None:
            bbox_rows.append(i)
            bbox_t.append(np.linspace(rg[0], rg[1], n_samples))

    def run(sel, t_vals):
        pixel, weights, _ = forward_rays_fast(frozen, nm, origins[sel], dirs[sel], t_vals,
                                              config.k, config.grad_along_ray)
        rgb[sel] = pixel.data
        wsum = weights.data.sum(axis=1)
        acc[sel] = wsum
        exp_t[sel] = (weights.data * t_vals).sum(axis=1) / np.maximum(wsum, 1e-12)

    idx = np.flatnonzero(hit)
    for s in range(0, len(idx), config.tile_rays):
        sel = idx[s : s + config.tile_rays]
        run(sel, sample_hit_rays(frozen, nm, origins[sel], dirs[sel], t[sel], config, rng))
    for s in range(0, len(bbox_rows), config.tile_rays):
        sel = np.array(bbox_rows[s : s + config.tile_rays], dtype=np.int64)
        run(sel, np.array(bbox_t[s : s + config.tile_rays]))
    return rgb, exp_t, acc


def render_image(params: NetworkParams, nm: NeuralMesh, camera: CameraModel,
                 config: RenderConfig | None = None):
    """Render a full frame; returns dict with image/depth/acc buffers."""
    config = config or RenderConfig()
    pixels = camera.image_grid_pixels()
    origin, dirs, unit_z = camera.pixel_rays(pixels)
    origins = np.broadcast_to(origin, dirs.shape)
    rgb, exp_t, acc = render_rays(params, nm, origins, dirs, config)
    h, w = camera.height, camera.width
    return {
        "image": rgb.reshape(h, w, 3),
        "depth": (exp_t * unit_z).reshape(h, w),
        "acc": acc.reshape(h, w),
    }


def render_pixel(params: NetworkParams, nm: NeuralMesh, camera: CameraModel,
                 pixel_xy, config: RenderConfig | None = None) -> np.ndarray:
    """One pixel through the identical path as render_image."""
    config = config or RenderConfig()
    origin, dirs, _ = camera.pixel_rays(np.asarray(pixel_xy, dtype=np.float64)[None])
    rgb, _, _ = render_rays(params, nm, np.broadcast_to(origin, dirs.shape), dirs, config)
    return rgb[0]


def preview_config(config: RenderConfig, scale: int) -> RenderConfig:
    """Reduced-cost settings for interactive previews."""
    return replace(config, coarse_n=max(8, config.coarse_n // scale),
                   fine_n=max(0, config.fine_n // scale))
