"""Training/render hot path.

The neighbor interpolation (features, d_hat, n_s, n_r) depends only on the
query point, never on network parameters, so its values and its jacobians
with respect to the point are computed here as plain numpy constants and only
the MLPs are recorded on the tape. The SDF spatial gradient is then assembled
as  grad_P s = J_ns^T g_ns + J_dhat^T g_dhat + J_F^T g_F  with the g_* taken
from a create_graph backward through the geometry net, which keeps parameter
gradients exact (including through the gradient fed to the appearance net and
the Eikonal term). Equality with the reference tape path is covered by tests.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..neuralmesh import DISTANCE_CLAMP_SCALE, NeuralMesh
from .compositing import composite_batch
from .encoding import encode
from .network import NetworkParams


def interpolation_constants(nm: NeuralMesh, points: np.ndarray,
                            view_dirs: np.ndarray | None, k: int, dtype=np.float32):
    """Values and point-jacobians of all interpolated quantities."""
    pts = np.asarray(points, dtype=np.float64)
    q = len(pts)
    idx, _ = nm.vertex_index().query_fast(pts, k)
    delta = DISTANCE_CLAMP_SCALE * max(nm.mesh.bbox_diag, 1e-12)

    vk = nm.mesh.vertices[idx]  # (Q, K, 3)
    nk = nm.mesh.vertex_normals[idx]
    diff = pts[:, None, :] - vk
    d = np.sqrt((diff * diff).sum(axis=2) + 1e-30)  # (Q, K)
    c = np.maximum(d, delta)
    u = diff / c[:, :, None]
    w = 1.0 / c
    s = w.sum(axis=1, keepdims=True)  # (Q, 1)
    # dw_k/dP = -u_k / c^2 where unclamped, 0 where clamped.
    dw = (d > delta)[:, :, None] * (-u) / (c * c)[:, :, None]  # (Q, K, 3)

    feats = np.concatenate([nm.geometry, nm.appearance], axis=1)[idx]  # (Q, K, Dg+Da)
    fbar = (w[:, :, None] * feats).sum(axis=1) / s  # (Q, D)
    jf = np.einsum("qkp,qkd->qdp", dw, feats - fbar[:, None, :]) / s[:, :, None]

    d_hat = (w * d).sum(axis=1, keepdims=True) / s  # (Q, 1)
    jdh = ((dw * (d - d_hat)[:, :, None]) + w[:, :, None] * u).sum(axis=1) / s  # (Q, 3)

    qk = (u * nk).sum(axis=2)  # (Q, K)
    a_over_s = (w * qk).sum(axis=1, keepdims=True) / s
    n_s = -a_over_s
    dqk = (nk - u * qk[:, :, None]) / c[:, :, None]  # (Q, K, 3)
    jns = -((dw * (qk - a_over_s)[:, :, None]) + w[:, :, None] * dqk).sum(axis=1) / s

    dg = nm.geometry_dim
    out = {
        "idx": idx,
        "geo": fbar[:, :dg].astype(dtype),
        "app": fbar[:, dg:].astype(dtype),
        "d_hat": d_hat.astype(dtype),
        "n_s": n_s.astype(dtype),
        "j_geo": jf[:, :dg, :].astype(dtype),  # (Q, Dg, 3)
        "j_d_hat": jdh.astype(dtype),  # (Q, 3)
        "j_n_s": jns.astype(dtype),  # (Q, 3)
    }
    if view_dirs is not None:
        v = np.asarray(view_dirs, dtype=np.float64)
        rel = v[:, None, :] - nk
        n_r = (w[:, :, None] * rel).sum(axis=1) / s
        out["n_r"] = n_r.astype(dtype)
    return out


def geometry_fast(params: NetworkParams, nm: NeuralMesh, points: np.ndarray, k: int):
    """(sdf (Q,1) Tensor, grad_P s (Q,3) Tensor, constants dict).

    Both outputs are differentiable with respect to network parameters.
    """
    cons = interpolation_constants(nm, points, None, k, dtype=params.dtype)
    x_ns = ad.Tensor(cons["n_s"], requires_grad=True)
    x_dh = ad.Tensor(cons["d_hat"], requires_grad=True)
    x_fg = ad.Tensor(cons["geo"], requires_grad=True)
    lv = params.encoding_levels
    sdf = params.geometry.forward(ad.concat([encode(x_ns, lv), x_fg, encode(x_dh, lv)], axis=1))
    g_ns, g_dh, g_fg = ad.grad(ad.sum_(sdf), [x_ns, x_dh, x_fg], create_graph=True)
    q = len(cons["n_s"])
    grad_p = ad.add(
        ad.add(ad.mul(g_ns, ad.Tensor(cons["j_n_s"])),
               ad.mul(g_dh, ad.Tensor(cons["j_d_hat"]))),
        ad.sum_(ad.mul(ad.reshape(g_fg, (q, -1, 1)), ad.Tensor(cons["j_geo"])), axis=1),
    )
    return sdf, grad_p, cons


def forward_rays_fast(params: NetworkParams, nm: NeuralMesh, origins: np.ndarray,
                      dirs: np.ndarray, t_vals: np.ndarray, k: int,
                      grad_along_ray: bool = False):
    """Fast-path equivalent of pipeline.forward_rays (same math)."""
    r, s = t_vals.shape
    pts = (origins[:, None, :] + t_vals[:, :, None] * dirs[:, None, :]).reshape(-1, 3)
    vdirs = np.repeat(dirs, s, axis=0)
    sdf, grad_p, cons = geometry_fast(params, nm, pts, k)
    cons_nr = interpolation_view_term(nm, cons["idx"], pts, vdirs, params.dtype)
    if grad_along_ray:
        d_t = ad.Tensor(vdirs.astype(params.dtype))
        proj = ad.sum_(ad.mul(grad_p, d_t), axis=1, keepdims=True)
        grad_in = ad.mul(proj, d_t)
    else:
        grad_in = grad_p
    lv = params.encoding_levels
    app_in = ad.concat(
        [encode(ad.Tensor(cons_nr), lv), ad.Tensor(cons["app"]), grad_in,
         encode(ad.Tensor(cons["d_hat"]), lv)],
        axis=1,
    )
    colors = ad.sigmoid(params.appearance.forward(app_in))
    pixel, weights = composite_batch(
        ad.reshape(sdf, (r, s)), ad.reshape(colors, (r, s, 3)), params.steepness
    )
    return pixel, weights, ad.reshape(sdf, (r, s))


def interpolation_view_term(nm: NeuralMesh, idx: np.ndarray, points: np.ndarray,
                            view_dirs: np.ndarray, dtype=np.float32) -> np.ndarray:
    """n_r for precomputed neighbors (constant w.r.t. parameters)."""
    pts = np.asarray(points, dtype=np.float64)
    delta = DISTANCE_CLAMP_SCALE * max(nm.mesh.bbox_diag, 1e-12)
    vk = nm.mesh.vertices[idx]
    nk = nm.mesh.vertex_normals[idx]
    diff = pts[:, None, :] - vk
    d = np.sqrt((diff * diff).sum(axis=2) + 1e-30)
    w = 1.0 / np.maximum(d, delta)
    s = w.sum(axis=1, keepdims=True)
    rel = np.asarray(view_dirs, dtype=np.float64)[:, None, :] - nk
    return ((w[:, :, None] * rel).sum(axis=1) / s).astype(dtype)


def coarse_sdf_fast(params: NetworkParams, nm: NeuralMesh, points: np.ndarray, k: int) -> np.ndarray:
    """No-grad geometry evaluation for importance sampling."""
    cons = interpolation_constants(nm, points, None, k, dtype=params.dtype)
    with ad.no_grad():
        lv = params.encoding_levels
        sdf = params.geometry.forward(
            ad.concat([encode(ad.Tensor(cons["n_s"]), lv), ad.Tensor(cons["geo"]),
                       encode(ad.Tensor(cons["d_hat"]), lv)], axis=1)
        )
    return sdf.data.reshape(-1)
