"""Local query context from the neural mesh.

For a query point P with K nearest vertices V_k (weights w_k = 1/max(d_k, delta)):

  features = sum w_k F(V_k) / sum w_k
  d_hat    = sum w_k d_k / sum w_k                    (weighted vertex distance)
  n_s      = -sum w_k (u_k . n_k) / sum w_k           (signed side indicator)
  n_r      = sum w_k (view_dir - n_k) / sum w_k       (relevant normal)

with u_k = (P - V_k)/d_k and n_k the angle-weighted vertex normal. Everything
is differentiable with respect to P (neighbor selection is held fixed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..neuralmesh import DISTANCE_CLAMP_SCALE, NeuralMesh


@dataclass
class QueryContext:
    interp_geo_feature: np.ndarray
    interp_app_feature: np.ndarray
    n_s: float
    n_r: np.ndarray
    d_hat: float
    sdf_gradient: np.ndarray | None = None


@dataclass
class BatchQuery:
    """Tape-level query context for a batch of points."""

    points: "ad.Tensor"  # (Q, 3)
    geo_features: "ad.Tensor"  # (Q, D_g)
    app_features: "ad.Tensor"  # (Q, D_a)
    n_s: "ad.Tensor"  # (Q, 1)
    n_r: "ad.Tensor"  # (Q, 3)
    d_hat: "ad.Tensor"  # (Q, 1)
    neighbor_idx: np.ndarray  # (Q, K)


def interpolate_batch(nm: NeuralMesh, points: "ad.Tensor", view_dirs: "ad.Tensor | None",
                      k: int, neighbor_idx: np.ndarray | None = None) -> BatchQuery:
    if k < 1:
        raise ValueError("k must be >= 1")
    if nm.mesh.num_vertices == 0:
        raise ValueError("empty neural mesh")
    points = ad.as_tensor(points)
    q = points.data.shape[0]
    dtype = points.data.dtype
    if neighbor_idx is None:
        neighbor_idx, _ = nm.vertex_index().query_fast(points.data, k)
    delta = DISTANCE_CLAMP_SCALE * max(nm.mesh.bbox_diag, 1e-12)

    verts = ad.Tensor(nm.mesh.vertices.astype(dtype, copy=False))
    normals = ad.Tensor(nm.mesh.vertex_normals.astype(dtype, copy=False))
    vk = ad.gather_rows(verts, neighbor_idx)  # (Q, K, 3)
    nk = ad.gather_rows(normals, neighbor_idx)

    diff = ad.sub(ad.reshape(points, (q, 1, 3)), vk)
    dist = ad.norm(diff, axis=2)  # (Q, K)
    dist_c = ad.clamp_min(dist, delta)
    w = ad.div(1.0, dist_c)
    wsum = ad.sum_(w, axis=1, keepdims=True)  # (Q, 1)

    def wmean_vec(values):  # (Q, K, D) -> (Q, D)
        num = ad.sum_(ad.mul(values, ad.reshape(w, (q, -1, 1))), axis=1)
        return ad.div(num, wsum)

    geo = wmean_vec(ad.gather_rows(ad.Tensor(nm.geometry.astype(dtype, copy=False)), neighbor_idx))
    app = wmean_vec(ad.gather_rows(ad.Tensor(nm.appearance.astype(dtype, copy=False)), neighbor_idx))
    d_hat = ad.div(ad.sum_(ad.mul(w, dist), axis=1, keepdims=True), wsum)

    u = ad.div(diff, ad.reshape(dist_c, (q, -1, 1)))
    dots = ad.sum_(ad.mul(u, nk), axis=2)  # (Q, K)
    n_s = ad.neg(ad.div(ad.sum_(ad.mul(w, dots), axis=1, keepdims=True), wsum))

    if view_dirs is None:
        n_r = ad.Tensor(np.zeros((q, 3), dtype=dtype))
    else:
        view_dirs = ad.as_tensor(view_dirs)
        rel = ad.sub(ad.reshape(view_dirs, (q, 1, 3)), nk)
        n_r = wmean_vec(rel)

    return BatchQuery(points=points, geo_features=geo, app_features=app,
                      n_s=n_s, n_r=n_r, d_hat=d_hat, neighbor_idx=neighbor_idx)


def interpolate_query(nm: NeuralMesh, point: np.ndarray, view_dir: np.ndarray,
                      k: int) -> QueryContext:
    """Single-point query context (plain arrays)."""
    with ad.no_grad():
        bq = interpolate_batch(
            nm,
            ad.Tensor(np.asarray(point, dtype=np.float64)[None]),
            None if view_dir is None else ad.Tensor(np.asarray(view_dir, dtype=np.float64)[None]),
            k,
        )
    return QueryContext(
        interp_geo_feature=bq.geo_features.data[0],
        interp_app_feature=bq.app_features.data[0],
        n_s=float(bq.n_s.data[0, 0]),
        n_r=bq.n_r.data[0],
        d_hat=float(bq.d_hat.data[0, 0]),
    )
