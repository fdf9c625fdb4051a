"""NeRF-style sinusoidal positional encoding."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad


def encode(x: "ad.Tensor", levels: int) -> "ad.Tensor":
    """Concatenate x with [sin(2^l pi x), cos(2^l pi x)] for l < levels.

    Applied per component along the last axis; output width = d * (1 + 2L).
    """
    x = ad.as_tensor(x)
    if levels < 0:
        raise ValueError("levels must be >= 0")
    parts = [x]
    for l in range(levels):
        scaled = ad.mul(x, float(2**l) * np.pi)
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    if len(parts) == 1:
        return x
    return ad.concat(parts, axis=-1)


def positional_encoding(x: np.ndarray, levels: int) -> np.ndarray:
    """Plain-array variant of `encode`."""
    return encode(ad.as_tensor(np.asarray(x, dtype=np.float64)), levels).data
