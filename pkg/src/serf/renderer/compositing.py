"""Logistic-CDF alpha compositing of SDF samples along rays.

With Phi(x) = 1/(1 + exp(-steepness * x)) and sorted samples s_1..s_S, the
opacity of interval i is alpha_i = max((Phi(s_i) - Phi(s_{i+1})) / Phi(s_i), 0),
the transmittance T_i = prod_{j<i}(1 - alpha_j), and the pixel color is
sum_i T_i alpha_i c_i over the S-1 intervals. Rays whose weights sum below 1
composite over black background.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad

PHI_FLOOR = 1e-12
ALPHA_CEIL = 1.0 - 1e-7


def composite_batch(sdf: "ad.Tensor", colors: "ad.Tensor", steepness) -> tuple:
    """sdf (R, S), colors (R, S, 3) (last sample's color unused).

    Returns (pixel (R, 3), weights (R, S)); the last per-sample weight is 0.
    """
    sdf = ad.as_tensor(sdf)
    colors = ad.as_tensor(colors)
    r, s = sdf.data.shape
    if s < 2:
        raise ValueError("compositing needs at least 2 samples per ray")
    phi = ad.sigmoid(ad.mul(ad.as_tensor(steepness), sdf))
    phi_i = ad.slice_axis(phi, 1, 0, s - 1)
    phi_j = ad.slice_axis(phi, 1, 1, s)
    # Guarded division: alpha forced to 0 where Phi underflows.
    guard = (phi_i.data >= PHI_FLOOR).astype(phi_i.data.dtype)
    alpha = ad.clamp_min(ad.div(ad.sub(phi_i, phi_j), ad.clamp_min(phi_i, PHI_FLOOR)), 0.0)
    alpha = ad.mul(alpha, ad.Tensor(guard))
    # Ceiling keeps log(1 - alpha) finite; weight sums then never exceed 1.
    alpha = ad.clamp_max(alpha, ALPHA_CEIL)

    dt = sdf.data.dtype
    log_t = ad.cumsum(ad.log(ad.sub(1.0, alpha)), axis=1)
    exclusive = ad.concat([ad.Tensor(np.zeros((r, 1), dtype=dt)), ad.slice_axis(log_t, 1, 0, s - 2)], axis=1)
    trans = ad.exp(exclusive)
    w = ad.mul(trans, alpha)  # (R, S-1)
    pixel = ad.sum_(ad.mul(ad.reshape(w, (r, s - 1, 1)), ad.slice_axis(colors, 1, 0, s - 1)), axis=1)
    weights = ad.concat([w, ad.Tensor(np.zeros((r, 1), dtype=dt))], axis=1)
    return pixel, weights


def composite(sdf_values: np.ndarray, colors: np.ndarray, steepness: float):
    """Single-ray variant on plain arrays.

    `colors` may carry one entry per sample or one per interval (S - 1).
    Returns (rgb (3,), per-sample weights (S,)).
    """
    sdf_values = np.asarray(sdf_values, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    s = len(sdf_values)
    if len(colors) == s - 1:
        colors = np.concatenate([colors, np.zeros((1, 3))])
    if len(colors) != s:
        raise ValueError("colors must have S or S-1 entries")
    with ad.no_grad():
        pixel, weights = composite_batch(
            ad.Tensor(sdf_values[None]), ad.Tensor(colors[None]), float(steepness)
        )
    return pixel.data[0], weights.data[0]


def composite_weights_np(sdf: np.ndarray, steepness: float) -> np.ndarray:
    """Weights only, plain numpy (coarse pass for importance sampling)."""
    phi = 1.0 / (1.0 + np.exp(-steepness * np.asarray(sdf, dtype=np.float64)))
    phi_i, phi_j = phi[..., :-1], phi[..., 1:]
    alpha = np.maximum((phi_i - phi_j) / np.maximum(phi_i, PHI_FLOOR), 0.0)
    alpha[phi_i < PHI_FLOOR] = 0.0
    alpha = np.minimum(alpha, ALPHA_CEIL)
    trans = np.cumprod(1.0 - alpha, axis=-1)
    trans = np.concatenate([np.ones_like(trans[..., :1]), trans[..., :-1]], axis=-1)
    return trans * alpha
