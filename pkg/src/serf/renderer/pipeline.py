"""Network forward passes over query contexts, SDF spatial gradients, and the
per-ray rendering pipeline shared by training and inference."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..neuralmesh import NeuralMesh
from .compositing import composite_batch
from .encoding import encode
from .network import NetworkParams
from .query import BatchQuery, QueryContext, interpolate_batch


def geometry_inputs(params: NetworkParams, bq: BatchQuery) -> "ad.Tensor":
    lv = params.encoding_levels
    return ad.concat([encode(bq.n_s, lv), bq.geo_features, encode(bq.d_hat, lv)], axis=1)


def appearance_inputs(params: NetworkParams, bq: BatchQuery, sdf_gradient) -> "ad.Tensor":
    lv = params.encoding_levels
    return ad.concat(
        [encode(bq.n_r, lv), bq.app_features, ad.as_tensor(sdf_gradient), encode(bq.d_hat, lv)],
        axis=1,
    )


def geometry_forward_batch(params: NetworkParams, bq: BatchQuery) -> "ad.Tensor":
    return params.geometry.forward(geometry_inputs(params, bq))


def appearance_forward_batch(params: NetworkParams, bq: BatchQuery, sdf_gradient) -> "ad.Tensor":
    return ad.sigmoid(params.appearance.forward(appearance_inputs(params, bq, sdf_gradient)))


def geometry_with_gradient(params: NetworkParams, nm: NeuralMesh, points: np.ndarray,
                           k: int, view_dirs: np.ndarray | None = None):
    """(sdf (Q,1), grad (Q,3), batch query) with the gradient differentiable
    with respect to network parameters (built with create_graph)."""
    p_t = ad.Tensor(np.asarray(points, dtype=params.dtype), requires_grad=True)
    bq = interpolate_batch(nm, p_t, view_dirs, k)
    sdf = geometry_forward_batch(params, bq)
    grad_p = ad.grad(ad.sum_(sdf), p_t, create_graph=True)
    return sdf, grad_p, bq


def _ctx_query(ctx: QueryContext) -> BatchQuery:
    return BatchQuery(
        points=ad.Tensor(np.zeros((1, 3))),
        geo_features=ad.Tensor(np.asarray(ctx.interp_geo_feature, dtype=np.float64)[None]),
        app_features=ad.Tensor(np.asarray(ctx.interp_app_feature, dtype=np.float64)[None]),
        n_s=ad.Tensor(np.array([[ctx.n_s]], dtype=np.float64)),
        n_r=ad.Tensor(np.asarray(ctx.n_r, dtype=np.float64)[None]),
        d_hat=ad.Tensor(np.array([[ctx.d_hat]], dtype=np.float64)),
        neighbor_idx=np.zeros((1, 1), dtype=np.int64),
    )


def geometry_forward(params: NetworkParams, ctx: QueryContext) -> float:
    """SDF for one query context."""
    with ad.no_grad():
        return float(geometry_forward_batch(params, _ctx_query(ctx)).data[0, 0])


def appearance_forward(params: NetworkParams, ctx: QueryContext) -> np.ndarray:
    """RGB in [0, 1] for one query context (sdf_gradient must be filled)."""
    if ctx.sdf_gradient is None:
        raise ValueError("ctx.sdf_gradient must be populated before the appearance pass")
    with ad.no_grad():
        rgb = appearance_forward_batch(
            params, _ctx_query(ctx), ad.Tensor(np.asarray(ctx.sdf_gradient, dtype=np.float64)[None])
        )
    return rgb.data[0]


def sdf_spatial_gradient(params: NetworkParams, nm: NeuralMesh, point: np.ndarray,
                         view_dir: np.ndarray | None = None, k: int = 8) -> np.ndarray:
    """Gradient of the full point -> context -> geometry composition."""
    frozen = params.constant_view()
    sdf, grad_p, _ = geometry_with_gradient(frozen, nm, np.atleast_2d(point), k)
    return grad_p.data[0] if np.asarray(point).ndim == 1 else grad_p.data


def forward_rays(params: NetworkParams, nm: NeuralMesh, origins: np.ndarray,
                 dirs: np.ndarray, t_vals: np.ndarray, k: int,
                 grad_along_ray: bool = False):
    """Full differentiable pipeline for R rays with S samples each.

    Returns (pixel (R, 3) Tensor, weights (R, S) Tensor, sdf (R, S) Tensor).
    """
    r, s = t_vals.shape
    pts = (origins[:, None, :] + t_vals[:, :, None] * dirs[:, None, :]).reshape(-1, 3)
    vdirs = np.repeat(dirs, s, axis=0).astype(params.dtype, copy=False)
    sdf, grad_p, bq = geometry_with_gradient(params, nm, pts, k, view_dirs=vdirs)
    if grad_along_ray:
        d_t = ad.Tensor(vdirs)
        proj = ad.sum_(ad.mul(grad_p, d_t), axis=1, keepdims=True)
        grad_in = ad.mul(proj, d_t)
    else:
        grad_in = grad_p
    colors = appearance_forward_batch(params, bq, grad_in)
    pixel, weights = composite_batch(
        ad.reshape(sdf, (r, s)), ad.reshape(colors, (r, s, 3)), params.steepness
    )
    return pixel, weights, ad.reshape(sdf, (r, s))
