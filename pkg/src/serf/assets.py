"""Scene ingestion/persistence and synthetic desk-scale scene generation.

A scene lives in one directory indexed by `manifest.json`:

  {
    "mesh": "mesh.ply",
    "cameras": "cameras.json",
    "config": {"k": 8, "encoding_levels": 6, "band_half_width": null},
    "views": [{"image": ..., "appearance": ..., "geometry": ...,
               "depth": ..., "mask": ...}, ...],
    "labels": "labels.svmk",          # optional ground-truth vertex labels
    "neural_mesh": "scene.snmb",      # optional cached per-vertex features
    "params": "net.smlp"              # optional network checkpoint
  }

All paths are relative to the manifest directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import formats, shapes
from .geometry import CameraModel, TriangleMesh, load_cameras, save_cameras
from .neuralmesh import NeuralMesh, build_neural_mesh, render_hit_map


class SceneError(ValueError):
    pass


@dataclass
class SceneBundle:
    root: str
    manifest: dict
    mesh: TriangleMesh
    cameras: list
    config: dict = field(default_factory=dict)

    _images: dict = field(default_factory=dict, repr=False)
    _features: dict = field(default_factory=dict, repr=False)
    _depths: dict = field(default_factory=dict, repr=False)
    _neural_mesh: NeuralMesh | None = field(default=None, repr=False)

    @property
    def num_views(self) -> int:
        return len(self.manifest.get("views", []))

    def path(self, rel) -> str:
        return os.path.join(self.root, rel)

    def _view_entry(self, n: int, kind: str):
        views = self.manifest.get("views", [])
        if not 0 <= n < len(views):
            raise SceneError(f"view {n} out of range")
        return views[n].get(kind)

    def image(self, n: int) -> np.ndarray:
        if n not in self._images:
            self._images[n] = formats.load_image(self.path(self._view_entry(n, "image")))
        return self._images[n]

    def feature_map(self, n: int, kind: str) -> np.ndarray:
        key = (n, kind)
        if key not in self._features:
            rel = self._view_entry(n, kind)
            if rel is None:
                raise SceneError(f"view {n} has no {kind} features")
            self._features[key] = formats.load_feature_map(self.path(rel))
        return self._features[key]

    def depth(self, n: int) -> np.ndarray:
        if n not in self._depths:
            rel = self._view_entry(n, "depth")
            if rel is None:
                raise SceneError(f"view {n} has no depth")
            self._depths[n] = formats.load_depth(self.path(rel))
        return self._depths[n]

    def mask(self, n: int) -> np.ndarray | None:
        rel = self._view_entry(n, "mask")
        return None if rel is None else formats.load_pixel_mask(self.path(rel))

    def labels(self) -> np.ndarray | None:
        rel = self.manifest.get("labels")
        return None if rel is None else formats.load_vertex_mask(self.path(rel))

    def views(self) -> list:
        """(camera, image) pairs for training."""
        return [(self.cameras[n], self.image(n)) for n in range(self.num_views)]

    def neural_mesh(self, k: int | None = None) -> NeuralMesh:
        """Cached SNMB if present, else aggregated from the view features."""
        if self._neural_mesh is None:
            rel = self.manifest.get("neural_mesh")
            if rel is not None and os.path.exists(self.path(rel)):
                self._neural_mesh = NeuralMesh.load(self.path(rel))
            else:
                k = k or int(self.config.get("k", 8))
                apps = [self.feature_map(n, "appearance") for n in range(self.num_views)]
                geos = [self.feature_map(n, "geometry") for n in range(self.num_views)]
                depths = [self.depth(n) for n in range(self.num_views)]
                self._neural_mesh = build_neural_mesh(self.mesh, self.cameras, apps, geos,
                                                      k=k, depths=depths)
        return self._neural_mesh

    def network_params(self):
        from .renderer import NetworkParams

        rel = self.manifest.get("params")
        return None if rel is None else NetworkParams.load(self.path(rel))


def load_scene(manifest_path) -> SceneBundle:
    manifest_path = str(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise SceneError(f"manifest not found: {manifest_path}")
    except json.JSONDecodeError as e:
        raise SceneError(f"bad manifest {manifest_path}: {e}")

    for key in ("mesh", "cameras"):
        if key not in manifest:
            raise SceneError(f"manifest missing '{key}'")

    def need(rel, what):
        p = os.path.join(root, rel)
        if not os.path.exists(p):
            raise SceneError(f"{what} file missing: {p}")
        return p

    mesh = formats.load_mesh(need(manifest["mesh"], "mesh"))
    cameras = load_cameras(need(manifest["cameras"], "cameras"))
    bundle = SceneBundle(root=root, manifest=manifest, mesh=mesh, cameras=cameras,
                         config=dict(manifest.get("config", {})))

    views = manifest.get("views", [])
    if views and len(views) != len(cameras):
        raise SceneError(f"{len(views)} views but {len(cameras)} cameras")
    app_channels = None
    for n, v in enumerate(views):
        for kind in ("image", "appearance", "geometry", "depth", "mask"):
            if v.get(kind) is not None:
                need(v[kind], f"view {n} {kind}")
        img = bundle.image(n)
        cam = cameras[n]
        if img.shape[:2] != (cam.height, cam.width):
            raise SceneError(f"view {n}: image {img.shape[:2]} vs camera "
                             f"{(cam.height, cam.width)}")
        for kind in ("appearance", "geometry"):
            if v.get(kind) is not None:
                fm = bundle.feature_map(n, kind)
                if fm.shape[:2] != img.shape[:2]:
                    raise SceneError(f"view {n}: {kind} features {fm.shape[:2]} vs image")
                if kind == "appearance":
                    if app_channels is None:
                        app_channels = fm.shape[2]
                    elif fm.shape[2] != app_channels:
                        raise SceneError(f"view {n}: appearance channels vary")
        if v.get("depth") is not None and bundle.depth(n).shape != img.shape[:2]:
            raise SceneError(f"view {n}: depth dims differ from image")
    labels = bundle.labels()
    if labels is not None and len(labels) != mesh.num_vertices:
        raise SceneError("labels length differs from vertex count")
    return bundle


def save_scene(bundle: SceneBundle, out_dir) -> str:
    """Copy a bundle's assets into a new directory (byte-exact for binaries)."""
    import shutil

    os.makedirs(out_dir, exist_ok=True)
    rels = [bundle.manifest["mesh"], bundle.manifest["cameras"]]
    rels += [v[k] for v in bundle.manifest.get("views", [])
             for k in ("image", "appearance", "geometry", "depth", "mask") if v.get(k)]
    for key in ("labels", "neural_mesh", "params"):
        if bundle.manifest.get(key):
            rels.append(bundle.manifest[key])
    for rel in rels:
        dst = os.path.join(out_dir, rel)
        os.makedirs(os.path.dirname(dst) or out_dir, exist_ok=True)
        shutil.copyfile(bundle.path(rel), dst)
    out_manifest = os.path.join(out_dir, "manifest.json")
    with open(out_manifest, "w") as fh:
        json.dump(bundle.manifest, fh, indent=1)
    return out_manifest


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SyntheticSceneSpec:
    shape: str = "icosphere"  # icosphere | box | two_part
    texture: str = "bands"  # bands | checker | solid
    n_cameras: int = 20
    radius: float = 3.0
    resolution: int = 128
    focal_scale: float = 0.9  # fx = focal_scale * resolution
    seed: int = 0
    subdivisions: int = 3
    two_rings: bool = True  # alternate camera elevation for coverage

    def __post_init__(self):
        if self.n_cameras < 8 and self.shape == "two_part":
            raise ValueError("segmentation scenes need >= 8 cameras")


LIGHT_DIR = np.array([0.45, 0.7, 0.55]) / np.linalg.norm([0.45, 0.7, 0.55])


def texture_color(texture: str, points: np.ndarray, rng_phase: float = 0.0) -> np.ndarray:
    p = np.atleast_2d(points)
    if texture == "solid":
        return np.tile([0.7, 0.45, 0.3], (len(p), 1))
    if texture == "checker":
        s = np.sign(np.sin(4.0 * p[:, 0]) * np.sin(4.0 * p[:, 1]) * np.sin(4.0 * p[:, 2]))
        base = np.where(s[:, None] > 0, [0.85, 0.25, 0.2], [0.15, 0.35, 0.8])
        return base
    # smooth rgb bands, well inside [0, 1]
    f = np.stack([
        0.55 + 0.35 * np.sin(2.5 * p[:, 2] + rng_phase),
        0.5 + 0.3 * np.sin(2.0 * p[:, 0] + 1.7 + rng_phase),
        0.5 + 0.3 * np.cos(2.2 * p[:, 1] + 0.6 + rng_phase),
    ], axis=1)
    return f


def ring_cameras(n: int, radius: float, resolution: int, focal_scale: float,
                 two_rings: bool = True) -> list:
    cams = []
    for i in range(n):
        ang = 2.0 * np.pi * i / n
        elev = 0.35 if (two_rings and i % 2 == 0) else -0.15
        eye = radius * np.array([
            np.cos(ang) * np.cos(elev),
            np.sin(elev),
            np.sin(ang) * np.cos(elev),
        ])
        cams.append(CameraModel.look_at(eye=eye, target=[0, 0, 0],
                                        fx=focal_scale * resolution,
                                        width=resolution, height=resolution))
    return cams


def _build_shape(spec: SyntheticSceneSpec):
    if spec.shape == "icosphere":
        mesh = shapes.icosphere(spec.subdivisions)
        labels = None
    elif spec.shape == "box":
        mesh = shapes.box(size=(1.4, 1.4, 1.4), segments=(4, 4, 4))
        labels = None
    elif spec.shape == "two_part":
        mesh, labels = shapes.compound_two_part()
    else:
        raise ValueError(f"unknown shape {spec.shape!r}")
    return mesh, labels


def rasterize_hits(mesh: TriangleMesh, camera: CameraModel):
    """Perspective-correct z-buffer rasterization (generator fast path).

    Returns (face (H*W,), bary (H*W, 3), depth (H*W,)); face = -1 on empty
    pixels. Assumes the mesh lies fully in front of the camera. Depths agree
    with the raycast renderer to float64 roundoff away from silhouettes.
    """
    h, w = camera.height, camera.width
    pix, z, valid = camera.project_batch(mesh.vertices)
    if not valid.all():
        # Fall back to raycasting when geometry straddles the image plane.
        t, face, bary, unit_z = render_hit_map(mesh, camera)
        return face, bary, t * unit_z
    depth = np.full(h * w, np.inf)
    face = np.full(h * w, -1, dtype=np.int64)
    bary = np.zeros((h * w, 3))
    inv_z = 1.0 / z
    for fi, (a, b, c) in enumerate(mesh.faces):
        pa, pb, pc = pix[a], pix[b], pix[c]
        lo = np.floor(np.minimum(np.minimum(pa, pb), pc) - 0.5).astype(int)
        hi = np.ceil(np.maximum(np.maximum(pa, pb), pc) - 0.5).astype(int)
        x0, y0 = np.maximum(lo, 0)
        x1 = min(hi[0], w - 1)
        y1 = min(hi[1], h - 1)
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        # Screen-space barycentric via edge functions.
        det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        if abs(det) < 1e-12:
            continue
        l1 = ((gx - pa[0]) * (pc[1] - pa[1]) - (gy - pa[1]) * (pc[0] - pa[0])) / det
        l2 = ((pb[0] - pa[0]) * (gy - pa[1]) - (pb[1] - pa[1]) * (gx - pa[0])) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not inside.any():
            continue
        iy, ix = np.nonzero(inside)
        flat = (iy + y0) * w + (ix + x0)
        s0, s1, s2 = l0[inside], l1[inside], l2[inside]
        denom = s0 * inv_z[a] + s1 * inv_z[b] + s2 * inv_z[c]
        zpix = 1.0 / denom
        closer = zpix < depth[flat]
        flat = flat[closer]
        if len(flat) == 0:
            continue
        depth[flat] = zpix[closer]
        face[flat] = fi
        wb = np.stack([s0[closer] * inv_z[a], s1[closer] * inv_z[b],
                       s2[closer] * inv_z[c]], axis=1)
        bary[flat] = wb / wb.sum(axis=1, keepdims=True)
    depth[face < 0] = np.nan
    return face, bary, depth


def rasterize_view(mesh: TriangleMesh, camera: CameraModel, texture: str,
                   labels: np.ndarray | None = None, phase: float = 0.0):
    """Lambertian rasterization; returns dict with image/depth/features/mask."""
    face, bary, depth = rasterize_hits(mesh, camera)
    h, w = camera.height, camera.width
    hit = face >= 0
    rgb = np.zeros((h * w, 3))
    normals = np.zeros((h * w, 3))
    label_mask = np.zeros(h * w, dtype=np.uint8)
    if hit.any():
        f = face[hit]
        b = bary[hit]
        tri_v = mesh.vertices[mesh.faces[f]]
        pos = (tri_v * b[:, :, None]).sum(axis=1)
        n = (mesh.vertex_normals[mesh.faces[f]] * b[:, :, None]).sum(axis=1)
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
        shade = 0.25 + 0.75 * np.maximum((n * LIGHT_DIR).sum(axis=1), 0.0)
        albedo = texture_color(texture, pos, phase)
        rgb[hit] = np.clip(albedo * shade[:, None], 0.0, 1.0)
        normals[hit] = n
        if labels is not None:
            vl = labels[mesh.faces[f]]
            label_mask[hit] = (np.maximum(vl, 0).sum(axis=1) >= 2).astype(np.uint8)
    features = np.concatenate(
        [rgb, 0.5 * normals + 0.5, np.ones((h * w, 1))], axis=1
    ).reshape(h, w, 7)
    return {
        "image": rgb.reshape(h, w, 3),
        "depth": depth.reshape(h, w),
        "features": features,
        "mask": hit.reshape(h, w).astype(np.uint8),
        "label_mask": label_mask.reshape(h, w),
    }


def generate_synthetic_scene(spec: SyntheticSceneSpec, out_dir) -> SceneBundle:
    """Write a full synthetic scene (mesh, cameras, views, features, depths,
    masks, labels) under out_dir and load it back through the validator."""
    rng = np.random.default_rng(spec.seed)
    phase = float(rng.uniform(0, 2 * np.pi))
    mesh, labels = _build_shape(spec)
    cameras = ring_cameras(spec.n_cameras, spec.radius, spec.resolution, spec.focal_scale,
                           spec.two_rings)

    os.makedirs(out_dir, exist_ok=True)
    for sub in ("images", "features", "depth", "masks"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    formats.save_mesh_ply(os.path.join(out_dir, "mesh.ply"), mesh)
    save_cameras(cameras, os.path.join(out_dir, "cameras.json"))

    views = []
    for i, cam in enumerate(cameras):
        r = rasterize_view(mesh, cam, spec.texture, labels, phase)
        entry = {
            "image": f"images/view_{i:03d}.png",
            "appearance": f"features/app_{i:03d}.sfmb",
            "geometry": f"features/geo_{i:03d}.sfmb",
            "depth": f"depth/view_{i:03d}.sdpt",
            "mask": f"masks/view_{i:03d}.png",
        }
        formats.save_image(os.path.join(out_dir, entry["image"]), r["image"])
        formats.save_feature_map(os.path.join(out_dir, entry["appearance"]), r["features"])
        formats.save_feature_map(os.path.join(out_dir, entry["geometry"]), r["features"])
        formats.save_depth(os.path.join(out_dir, entry["depth"]), r["depth"])
        mask = r["label_mask"] if labels is not None else r["mask"]
        formats.save_pixel_mask(os.path.join(out_dir, entry["mask"]), mask)
        views.append(entry)

    manifest = {
        "mesh": "mesh.ply",
        "cameras": "cameras.json",
        "config": {"k": 8, "encoding_levels": 6, "band_half_width": None},
        "views": views,
    }
    if labels is not None:
        formats.save_vertex_mask(os.path.join(out_dir, "labels.svmk"), labels)
        manifest["labels"] = "labels.svmk"
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return load_scene(os.path.join(out_dir, "manifest.json"))
