"""Local-feature SDF surface renderer."""

from .compositing import composite, composite_batch, composite_weights_np
from .encoding import encode, positional_encoding
from .network import Mlp, NetworkParams, NumericalFault
from .pipeline import (
    appearance_forward,
    appearance_forward_batch,
    forward_rays,
    geometry_forward,
    geometry_forward_batch,
    geometry_with_gradient,
    sdf_spatial_gradient,
)
from .query import BatchQuery, QueryContext, interpolate_batch, interpolate_query
from .render import RenderConfig, preview_config, render_image, render_pixel, render_rays
from .sampling import band_t_values, ray_bbox_range, sample_pdf, sample_ray

__all__ = [
    "BatchQuery",
    "Mlp",
    "NetworkParams",
    "NumericalFault",
    "QueryContext",
    "RenderConfig",
    "appearance_forward",
    "appearance_forward_batch",
    "band_t_values",
    "composite",
    "composite_batch",
    "composite_weights_np",
    "encode",
    "forward_rays",
    "geometry_forward",
    "geometry_forward_batch",
    "geometry_with_gradient",
    "interpolate_batch",
    "interpolate_query",
    "positional_encoding",
    "preview_config",
    "ray_bbox_range",
    "render_image",
    "render_pixel",
    "render_rays",
    "sample_pdf",
    "sample_ray",
    "sdf_spatial_gradient",
]
