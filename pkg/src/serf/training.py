"""Losses and optimization for the surface renderer: color / SDF / Eikonal
terms, an Adam loop over posed views, the appearance-only fine-tune used by
texture painting, and a finite-difference gradient checker."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import CameraModel, TriangleMesh
from .neuralmesh import NeuralMesh
from .renderer import NetworkParams
from .renderer.fastpath import forward_rays_fast, geometry_fast
from .renderer.pipeline import geometry_with_gradient
from .renderer.render import RenderConfig, sample_hit_rays


class TrainingFault(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    ray_batch: int = 1024
    sdf_batch: int = 1024
    lr: float = 5e-4
    loss_weights: tuple = (1.0, 0.5, 0.1)  # (color, sdf, eikonal)
    iterations: int = 1000
    seed: int = 0
    k: int = 8
    coarse_n: int = 32
    fine_n: int = 32
    band_half_width: float | None = None
    near_surface_sigma_scale: float = 0.05  # x bbox diagonal
    checkpoint_every: int = 200
    dtype: type = np.float32

    def __post_init__(self):
        if min(self.ray_batch, self.sdf_batch, self.iterations + 1) < 1 or self.lr <= 0:
            raise ValueError("batch sizes, iterations and lr must be positive")
        if not all(np.isfinite(w) for w in self.loss_weights):
            raise ValueError("loss weights must be finite")


# ---------------------------------------------------------------------------
# losses


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.isfinite(np.asarray(a if not isinstance(a, ad.Tensor) else a.data)).all():
            raise TrainingFault(f"{name}: non-finite input")


def loss_color(pred_pixels, gt_pixels) -> "ad.Tensor":
    """Sum over the batch of squared L2 color error."""
    _check_finite("loss_color", pred_pixels, gt_pixels)
    pred = ad.as_tensor(pred_pixels)
    gt = np.asarray(gt_pixels, dtype=pred.data.dtype)
    if pred.data.shape != gt.shape:
        raise ValueError("pred/gt batch shapes differ")
    return ad.sum_(ad.square(ad.sub(pred, ad.Tensor(gt))))


def sdf_residual(pred_sdf, coarse_sdf_values) -> "ad.Tensor":
    """Sum of squared differences between predicted and coarse SDF values."""
    _check_finite("loss_sdf", pred_sdf, coarse_sdf_values)
    pred = ad.as_tensor(pred_sdf)
    coarse = np.asarray(coarse_sdf_values, dtype=pred.data.dtype).reshape(pred.data.shape)
    return ad.sum_(ad.square(ad.sub(pred, ad.Tensor(coarse))))


def eikonal_residual(gradients) -> "ad.Tensor":
    """Sum of (|grad| - 1)^2 over gradient vectors."""
    g = ad.as_tensor(gradients)
    _check_finite("loss_eikonal", g)
    return ad.sum_(ad.square(ad.sub(ad.norm(g, axis=-1), 1.0)))


def loss_sdf(params: NetworkParams, nm: NeuralMesh, sample_points: np.ndarray,
             coarse_sdf_values: np.ndarray, k: int = 8) -> "ad.Tensor":
    """Predicted-vs-coarse SDF loss at sample points."""
    sdf, _, _ = geometry_with_gradient(params, nm, np.asarray(sample_points), k)
    return sdf_residual(sdf, coarse_sdf_values)


def loss_eikonal(params: NetworkParams, nm: NeuralMesh, sample_points: np.ndarray,
                 view_dirs=None, k: int = 8) -> "ad.Tensor":
    """Unit-gradient-norm penalty at sample points (view_dirs accepted for
    signature parity; the geometry path does not use them)."""
    _, grad_p, _ = geometry_with_gradient(params, nm, np.asarray(sample_points), k)
    return eikonal_residual(grad_p)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params: list, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads: list) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            gd = np.asarray(g.data if isinstance(g, ad.Tensor) else g, dtype=p.data.dtype)
            m *= b1
            m += (1 - b1) * gd
            v *= b2
            v += (1 - b2) * gd * gd
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


# ---------------------------------------------------------------------------
# sample generation


def sample_sdf_points(mesh: TriangleMesh, n: int, rng: np.random.Generator,
                      sigma: float, bbox_scale: float = 1.1) -> np.ndarray:
    """50% near-surface (area-weighted face samples + normal jitter), 50%
    uniform in the scaled bbox."""
    n_surf = n // 2
    areas = mesh.face_areas / mesh.face_areas.sum()
    faces = rng.choice(len(mesh.faces), size=n_surf, p=areas)
    r1 = np.sqrt(rng.uniform(size=n_surf))[:, None]
    r2 = rng.uniform(size=n_surf)[:, None]
    tri = mesh.vertices[mesh.faces[faces]]
    pts = (1 - r1) * tri[:, 0] + r1 * (1 - r2) * tri[:, 1] + r1 * r2 * tri[:, 2]
    pts = pts + mesh.face_normals[faces] * rng.normal(scale=sigma, size=(n_surf, 1))

    center = 0.5 * (mesh.bbox_min + mesh.bbox_max)
    half = 0.5 * (mesh.bbox_max - mesh.bbox_min) * bbox_scale
    uni = center + rng.uniform(-1.0, 1.0, size=(n - n_surf, 3)) * half
    return np.concatenate([pts, uni])


@dataclass
class ViewCache:
    """Precomputed per-view ray data for training."""

    camera: CameraModel
    image: np.ndarray  # (H, W, 3) in [0, 1]
    dirs: np.ndarray  # (H*W, 3) unit world rays
    t_hit: np.ndarray  # (H*W,) ray parameter of the mesh hit (inf = miss)
    foreground: np.ndarray  # indices of hit pixels


def build_view_cache(mesh: TriangleMesh, camera: CameraModel, image: np.ndarray,
                     depth: np.ndarray | None = None) -> ViewCache:
    pixels = camera.image_grid_pixels()
    origin, dirs, unit_z = camera.pixel_rays(pixels)
    if depth is not None:
        t = np.asarray(depth, dtype=np.float64).reshape(-1) / unit_z
        t = np.where(np.isfinite(t), t, np.inf)
    else:
        from .geometry import raycast_batch

        t, face, _ = raycast_batch(mesh, origin, dirs)
    fg = np.flatnonzero(np.isfinite(t))
    return ViewCache(camera=camera, image=np.asarray(image, dtype=np.float64),
                     dirs=dirs, t_hit=t, foreground=fg)


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainResult:
    params: NetworkParams
    history: list = field(default_factory=list)  # (step, l_c, l_s, l_re) sums
    aborted: bool = False

    def history_csv(self) -> str:
        lines = ["step,l_c,l_s,l_re"]
        lines += [f"{s},{c:.9g},{d:.9g},{e:.9g}" for s, c, d, e in self.history]
        return "\n".join(lines) + "\n"


def train(nm: NeuralMesh, views: list, config: TrainConfig,
          params: NetworkParams | None = None,
          trainable: list | None = None,
          loss_mask: tuple = (True, True, True),
          depths: list | None = None,
          log_every: int = 0) -> TrainResult:
    """Optimize network parameters on posed views.

    `views` is a list of (CameraModel, image) pairs. With `trainable` given,
    only those parameters receive updates (used by the appearance fine-tune).
    Deterministic for a fixed config.seed.
    """
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = NetworkParams.create(nm.geometry_dim, nm.appearance_dim,
                                      seed=config.seed, dtype=config.dtype)
    opt_params = trainable if trainable is not None else params.parameters()
    adam = Adam(opt_params, config.lr)
    mesh = nm.mesh
    sdf_field = mesh.distance_field() if loss_mask[1] else None
    sigma = config.near_surface_sigma_scale * mesh.bbox_diag
    lam_c, lam_s, lam_re = config.loss_weights
    use_c = loss_mask[0] and lam_c > 0 and len(views) > 0
    use_s = loss_mask[1] and lam_s > 0
    use_re = loss_mask[2] and lam_re > 0

    caches = [build_view_cache(mesh, cam, img, depths[i] if depths else None)
              for i, (cam, img) in enumerate(views)] if use_c else []
    render_cfg = RenderConfig(k=config.k, coarse_n=config.coarse_n, fine_n=config.fine_n,
                              band_half_width=config.band_half_width)

    result = TrainResult(params=params)
    last_good = params.copy()
    t_start = time.time()
    for step in range(config.iterations):
        terms = []
        l_c = l_s = l_re = 0.0
        if use_c:
            vc = caches[rng.integers(len(caches))]
            pix = vc.foreground[rng.integers(0, len(vc.foreground), size=config.ray_batch)]
            dirs = vc.dirs[pix]
            origins = np.broadcast_to(vc.camera.center, dirs.shape)
            t_vals = sample_hit_rays(params.constant_view(), nm, origins, dirs,
                                     vc.t_hit[pix], render_cfg, rng)
            pred, _, _ = forward_rays_fast(params, nm, origins, dirs, t_vals, config.k)
            rows = pix // vc.camera.width
            cols = pix % vc.camera.width
            lc = loss_color(pred, vc.image[rows, cols])
            terms.append(ad.mul(lc, float(lam_c)))
            l_c = float(lc.data)
        if use_s or use_re:
            pts = sample_sdf_points(mesh, config.sdf_batch, rng, sigma)
            coarse = sdf_field.query(pts) if use_s else None
            sdf_t, grad_t, _ = geometry_fast(params, nm, pts, config.k)
            if use_s:
                ls = sdf_residual(sdf_t, coarse)
                terms.append(ad.mul(ls, float(lam_s)))
                l_s = float(ls.data)
            if use_re:
                lre = eikonal_residual(grad_t)
                terms.append(ad.mul(lre, float(lam_re)))
                l_re = float(lre.data)

        total = terms[0]
        for t_ in terms[1:]:
            total = ad.add(total, t_)
        if not np.isfinite(total.data):
            warnings.warn(f"training diverged at step {step}; restoring last checkpoint")
            params.load_state(last_good)
            result.aborted = True
            break
        grads = ad.grad(total, opt_params)
        adam.step(grads)
        result.history.append((step, l_c, l_s, l_re))
        if config.checkpoint_every and step % config.checkpoint_every == 0:
            last_good = params.copy()
        if log_every and step % log_every == 0:
            per = (time.time() - t_start) / (step + 1)
            print(f"step {step:6d}  l_c {l_c:.4f}  l_s {l_s:.5f}  l_re {l_re:.5f}  "
                  f"({per * 1e3:.0f} ms/step)", flush=True)
    return result


def fine_tune_appearance(nm: NeuralMesh, params: NetworkParams, edited_views: list,
                         config: TrainConfig) -> TrainResult:
    """Color-only updates restricted to appearance-net parameters; the
    geometry net and steepness are left byte-identical."""
    return train(nm, edited_views, config, params=params,
                 trainable=params.appearance_parameters(),
                 loss_mask=(True, False, False))


# ---------------------------------------------------------------------------
# gradient checking


def gradient_check(loss_fn, param_blocks: list, point_inputs: list | None = None,
                   h: float = 1e-4, rng: np.random.Generator | None = None) -> float:
    """Directional finite-difference check of tape gradients.

    `loss_fn()` rebuilds the scalar loss from current parameter values. For
    every parameter block (and every point-input tensor) a random unit
    direction v is drawn and (L(p + hv) - L(p - hv)) / 2h is compared against
    <dL/dp, v>. Returns the max relative error (scale floor 1).
    """
    rng = rng or np.random.default_rng(0)
    blocks = list(param_blocks) + list(point_inputs or [])
    loss = loss_fn()
    grads = ad.grad(loss, blocks)
    worst = 0.0
    for p, g in zip(blocks, grads):
        v = rng.normal(size=p.data.shape)
        v /= max(np.linalg.norm(v), 1e-12)
        analytic = float((g.data * v).sum())
        old = p.data.copy()
        p.data[...] = old + h * v
        up = float(loss_fn().data)
        p.data[...] = old - h * v
        down = float(loss_fn().data)
        p.data[...] = old
        fd = (up - down) / (2.0 * h)
        err = abs(analytic - fd) / max(abs(fd), abs(analytic), 1.0)
        worst = max(worst, err)
    return worst
