"""Geometry and appearance MLPs with a NeRF-style input skip.

Input layouts (fixed; encoded pieces use sinusoidal encoding at L levels):

  geometry   [ encode(n_s) | geometry feature | encode(d_hat) ]          -> sdf
  appearance [ encode(n_r) | appearance feature | sdf gradient | encode(d_hat) ] -> rgb
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import formats

DEFAULT_WIDTH = 128
DEFAULT_HIDDEN = 4
DEFAULT_SKIP = 2
DEFAULT_ENCODING_LEVELS = 6


class NumericalFault(FloatingPointError):
    """Non-finite activation inside a network forward pass."""


def encoded_dim(raw: int, levels: int) -> int:
    return raw * (1 + 2 * levels)


@dataclass
class Mlp:
    weights: list  # ad.Tensor (fan_in, fan_out)
    biases: list  # ad.Tensor (fan_out,)
    skip_at: int | None  # hidden layer index where the input is re-concatenated
    name: str = "mlp"

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
               width: int = DEFAULT_WIDTH, hidden: int = DEFAULT_HIDDEN,
               skip_at: int | None = DEFAULT_SKIP, name: str = "mlp",
               dtype=np.float64) -> "Mlp":
        if skip_at is not None and not 0 < skip_at < hidden:
            skip_at = None
        dims = []
        prev = in_dim
        for i in range(hidden):
            fan_in = prev + (in_dim if i == skip_at else 0)
            dims.append((fan_in, width))
            prev = width
        dims.append((prev, out_dim))
        weights, biases = [], []
        for i, (fi, fo) in enumerate(dims):
            # Xavier-style for tanh hidden layers, small-scale linear output.
            scale = 1.0 / np.sqrt(fi) if i < hidden else 0.1 / np.sqrt(fi)
            weights.append(ad.parameter(rng.normal(0.0, scale, size=(fi, fo)).astype(dtype)))
            biases.append(ad.parameter(np.zeros(fo, dtype=dtype)))
        return cls(weights=weights, biases=biases, skip_at=skip_at, name=name)

    @property
    def in_dim(self) -> int:
        return self.weights[0].data.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].data.shape[1]

    def forward(self, x: "ad.Tensor") -> "ad.Tensor":
        h = x
        n_hidden = len(self.weights) - 1
        for i in range(n_hidden):
            if i == self.skip_at and i > 0:
                h = ad.concat([h, x], axis=-1)
            h = ad.tanh(ad.add(ad.matmul(h, self.weights[i]), self.biases[i]))
            if not np.isfinite(h.data).all():
                raise NumericalFault(f"{self.name}: non-finite activation at hidden layer {i}")
        out = ad.add(ad.matmul(h, self.weights[-1]), self.biases[-1])
        if not np.isfinite(out.data).all():
            raise NumericalFault(f"{self.name}: non-finite output")
        return out

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def layer_arrays(self):
        return [(w.data, b.data) for w, b in zip(self.weights, self.biases)]

    def constant_view(self) -> "Mlp":
        return Mlp(
            weights=[ad.Tensor(w.data) for w in self.weights],
            biases=[ad.Tensor(b.data) for b in self.biases],
            skip_at=self.skip_at,
            name=self.name,
        )


@dataclass
class NetworkParams:
    """Weights of both nets plus the logistic steepness used in compositing."""

    geometry: Mlp
    appearance: Mlp
    log_steepness: "ad.Tensor"
    encoding_levels: int = DEFAULT_ENCODING_LEVELS

    @classmethod
    def create(cls, geometry_feature_dim: int, appearance_feature_dim: int,
               seed: int = 0, width: int = DEFAULT_WIDTH, hidden: int = DEFAULT_HIDDEN,
               encoding_levels: int = DEFAULT_ENCODING_LEVELS,
               initial_steepness: float = 20.0, dtype=np.float64) -> "NetworkParams":
        rng = np.random.default_rng(seed)
        pe1 = encoded_dim(1, encoding_levels)
        pe3 = encoded_dim(3, encoding_levels)
        geo_in = pe1 + geometry_feature_dim + pe1
        app_in = pe3 + appearance_feature_dim + 3 + pe1
        geometry = Mlp.create(geo_in, 1, rng, width=width, hidden=hidden, name="geometry", dtype=dtype)
        appearance = Mlp.create(app_in, 3, rng, width=width, hidden=hidden, name="appearance", dtype=dtype)
        return cls(geometry=geometry, appearance=appearance,
                   log_steepness=ad.parameter(np.asarray(np.log(initial_steepness), dtype=dtype)),
                   encoding_levels=encoding_levels)

    @property
    def steepness(self) -> "ad.Tensor":
        return ad.exp(self.log_steepness)

    @property
    def dtype(self):
        return self.geometry.weights[0].data.dtype

    def parameters(self) -> list:
        return self.geometry.parameters() + self.appearance.parameters() + [self.log_steepness]

    def appearance_parameters(self) -> list:
        return self.appearance.parameters()

    def constant_view(self) -> "NetworkParams":
        return NetworkParams(
            geometry=self.geometry.constant_view(),
            appearance=self.appearance.constant_view(),
            log_steepness=ad.Tensor(self.log_steepness.data),
            encoding_levels=self.encoding_levels,
        )

    def copy(self) -> "NetworkParams":
        loaded = NetworkParams(
            geometry=Mlp(
                weights=[ad.parameter(w.data.copy()) for w in self.geometry.weights],
                biases=[ad.parameter(b.data.copy()) for b in self.geometry.biases],
                skip_at=self.geometry.skip_at, name=self.geometry.name),
            appearance=Mlp(
                weights=[ad.parameter(w.data.copy()) for w in self.appearance.weights],
                biases=[ad.parameter(b.data.copy()) for b in self.appearance.biases],
                skip_at=self.appearance.skip_at, name=self.appearance.name),
            log_steepness=ad.parameter(self.log_steepness.data.copy()),
            encoding_levels=self.encoding_levels,
        )
        return loaded

    def load_state(self, other: "NetworkParams") -> None:
        for dst, src in zip(self.parameters(), other.parameters()):
            dst.data[...] = src.data

    def geometry_bytes(self) -> bytes:
        """Byte-exact fingerprint of geometry weights (freeze contract checks)."""
        buf = io.BytesIO()
        for w, b in self.geometry.layer_arrays():
            buf.write(w.tobytes())
            buf.write(b.tobytes())
        return buf.getvalue()

    def save(self, path) -> None:
        formats.save_network_arrays(
            path,
            self.geometry.layer_arrays(),
            self.appearance.layer_arrays(),
            float(self.log_steepness.data),
            self.geometry.skip_at,
            self.appearance.skip_at,
        )

    @classmethod
    def load(cls, path, encoding_levels: int = DEFAULT_ENCODING_LEVELS) -> "NetworkParams":
        geo, app, log_s, geo_skip, app_skip = formats.load_network_arrays(path)

        def rebuild(layers, skip, name):
            return Mlp(
                weights=[ad.parameter(w) for w, _ in layers],
                biases=[ad.parameter(b) for _, b in layers],
                skip_at=skip, name=name)

        return cls(geometry=rebuild(geo, geo_skip, "geometry"),
                   appearance=rebuild(app, app_skip, "appearance"),
                   log_steepness=ad.parameter(log_s),
                   encoding_levels=encoding_levels)
