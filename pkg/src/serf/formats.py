"""File formats: OBJ/PLY mesh ingest, depth (SDPT), feature maps (SFMB),
vertex masks (SVMK), neural mesh checkpoints (SNMB), network checkpoints
(SMLP), and PNG images.

All binary formats are little-endian. Layouts:

  SDPT  magic "SDPT", u32 version=1, u32 height, u32 width,
        f32 depth row-major (NaN = invalid pixel)
  SFMB  magic "SFMB", u32 version=1, u32 height, u32 width, u32 channels,
        f32 data row-major channel-last
  SVMK  magic "SVMK", u32 vertex_count, i8 labels in {-1, 0, 1}
  SNMB  magic "SNMB", u32 version=1, u32 vertices, u32 faces, u32 d_app,
        u32 d_geo, f64 positions (V,3), u32 face indices (F,3),
        f64 appearance (V,d_app), f64 geometry (V,d_geo), u32 coverage (V)
  SMLP  magic "SMLP", u32 version=1, two net headers
        (u32 n_layers, then per layer u32 fan_in, u32 fan_out, then u32 skip
        index or 0xFFFFFFFF), f64 log_steepness, then per net per layer
        f64 weights (fan_in, fan_out) row-major followed by f64 biases
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

from .geometry import TriangleMesh

_NO_SKIP = 0xFFFFFFFF


class FormatError(ValueError):
    """Malformed or mismatched asset file."""


def _expect_magic(fh, magic: bytes, path):
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")


def _read_u32(fh) -> int:
    return struct.unpack("<I", fh.read(4))[0]


def _read_array(fh, dtype, count, path):
    arr = np.fromfile(fh, dtype=dtype, count=count)
    if arr.size != count:
        raise FormatError(f"{path}: truncated (wanted {count} x {dtype})")
    return arr


# ---------------------------------------------------------------------------
# OBJ / PLY


def load_obj(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise FormatError(f"{path}: no vertices")
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))


def save_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "short": "i2", "ushort": "u2",
    "int": "i4", "uint": "u4", "float": "f4", "double": "f8",
    "int8": "i1", "uint8": "u1", "int16": "i2", "uint16": "u2",
    "int32": "i4", "uint32": "u4", "float32": "f4", "float64": "f8",
}


def _parse_ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise FormatError(f"{path}: not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype, list_count_dtype|None)])
    while True:
        line = fh.readline()
        if not line:
            raise FormatError(f"{path}: unterminated header")
        tokens = line.decode("ascii").split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if tokens[1] == "list":
                elements[-1][2].append((tokens[4], _PLY_TYPES[tokens[3]], _PLY_TYPES[tokens[2]]))
            else:
                elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]], None))
        elif tokens[0] == "end_header":
            break
    if fmt not in ("binary_little_endian", "ascii"):
        raise FormatError(f"{path}: unsupported PLY format {fmt}")
    return fmt, elements


def load_ply(path):
    """Read a PLY file; returns (vertex property dict, faces or None)."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)
        vertex_data = {}
        faces = None
        for name, count, props in elements:
            if fmt == "ascii":
                rows = [fh.readline().split() for _ in range(count)]
            if name == "vertex":
                if fmt == "binary_little_endian":
                    dtype = np.dtype([(p, "<" + t) for p, t, lst in props])
                    arr = _read_array(fh, dtype, count, path)
                    vertex_data = {p: np.array(arr[p]) for p, _, _ in props}
                else:
                    cols = np.array([[float(v) for v in r] for r in rows])
                    vertex_data = {p: cols[:, i] for i, (p, _, _) in enumerate(props)}
            elif name == "face":
                out = []
                if fmt == "binary_little_endian":
                    cnt_dt, idx_dt = np.dtype("<" + props[0][2]), np.dtype("<" + props[0][1])
                    for _ in range(count):
                        n = int(_read_array(fh, cnt_dt, 1, path)[0])
                        idx = _read_array(fh, idx_dt, n, path)
                        for k in range(1, n - 1):
                            out.append([idx[0], idx[k], idx[k + 1]])
                else:
                    for r in rows:
                        n = int(r[0])
                        idx = [int(x) for x in r[1 : 1 + n]]
                        for k in range(1, n - 1):
                            out.append([idx[0], idx[k], idx[k + 1]])
                faces = np.array(out, dtype=np.int64)
            else:  # skip unknown binary elements only if fixed-size
                if fmt == "binary_little_endian":
                    if any(lst for _, _, lst in props):
                        raise FormatError(f"{path}: cannot skip list element {name}")
                    row = sum(np.dtype(t).itemsize for _, t, _ in props)
                    fh.seek(row * count, 1)
    return vertex_data, faces


def load_mesh_ply(path) -> TriangleMesh:
    vdata, faces = load_ply(path)
    if faces is None:
        raise FormatError(f"{path}: PLY has no faces")
    verts = np.stack([vdata["x"], vdata["y"], vdata["z"]], axis=1).astype(np.float64)
    return TriangleMesh(verts, faces)


def load_mesh(path) -> TriangleMesh:
    p = str(path)
    if p.endswith(".obj"):
        return load_obj(path)
    if p.endswith(".ply"):
        return load_mesh_ply(path)
    raise FormatError(f"{path}: unknown mesh format")


def save_mesh_ply(path, mesh: TriangleMesh) -> None:
    with open(path, "wb") as fh:
        fh.write(b"ply\nformat binary_little_endian 1.0\n")
        fh.write(f"element vertex {mesh.num_vertices}\n".encode())
        fh.write(b"property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {mesh.num_faces}\n".encode())
        fh.write(b"property list uchar int vertex_indices\nend_header\n")
        mesh.vertices.astype("<f8").tofile(fh)
        counts = np.full((mesh.num_faces, 1), 3, dtype="u1")
        idx = mesh.faces.astype("<i4")
        rec = np.dtype([("n", "u1"), ("v", "<i4", 3)])
        rows = np.zeros(mesh.num_faces, dtype=rec)
        rows["n"] = counts[:, 0]
        rows["v"] = idx
        rows.tofile(fh)


def save_cloud_ply(path, points: np.ndarray, source_view: np.ndarray | None = None) -> None:
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    with open(path, "wb") as fh:
        fh.write(b"ply\nformat binary_little_endian 1.0\n")
        fh.write(f"element vertex {n}\n".encode())
        fh.write(b"property double x\nproperty double y\nproperty double z\n")
        if source_view is not None:
            fh.write(b"property uint source_view\n")
        fh.write(b"end_header\n")
        if source_view is None:
            points.astype("<f8").tofile(fh)
        else:
            rec = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("s", "<u4")])
            rows = np.zeros(n, dtype=rec)
            rows["x"], rows["y"], rows["z"] = points.T
            rows["s"] = np.asarray(source_view, dtype=np.uint32)
            rows.tofile(fh)


def load_cloud_ply(path):
    vdata, _ = load_ply(path)
    pts = np.stack([vdata["x"], vdata["y"], vdata["z"]], axis=1).astype(np.float64)
    src = vdata.get("source_view")
    return pts, (None if src is None else src.astype(np.uint32))


# ---------------------------------------------------------------------------
# depth / feature rasters


def save_depth(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise FormatError("depth must be 2D")
    with open(path, "wb") as fh:
        fh.write(b"SDPT")
        fh.write(struct.pack("<III", 1, depth.shape[0], depth.shape[1]))
        depth.astype("<f4").tofile(fh)


def load_depth(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SDPT", path)
        version, h, w = struct.unpack("<III", fh.read(12))
        if version != 1:
            raise FormatError(f"{path}: unsupported SDPT version {version}")
        return _read_array(fh, "<f4", h * w, path).reshape(h, w).astype(np.float64)


def save_feature_map(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 3:
        raise FormatError("feature map must be (H, W, C)")
    h, w, c = values.shape
    with open(path, "wb") as fh:
        fh.write(b"SFMB")
        fh.write(struct.pack("<IIII", 1, h, w, c))
        values.astype("<f4").tofile(fh)


def load_feature_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SFMB", path)
        version, h, w, c = struct.unpack("<IIII", fh.read(16))
        if version != 1:
            raise FormatError(f"{path}: unsupported SFMB version {version}")
        data = _read_array(fh, "<f4", h * w * c, path).reshape(h, w, c).astype(np.float64)
    if not np.isfinite(data).all():
        raise FormatError(f"{path}: non-finite feature values")
    return data


def save_vertex_mask(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.int8)
    if not np.isin(labels, (-1, 0, 1)).all():
        raise FormatError("vertex labels must be in {-1, 0, 1}")
    with open(path, "wb") as fh:
        fh.write(b"SVMK")
        fh.write(struct.pack("<I", len(labels)))
        labels.tofile(fh)


def load_vertex_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SVMK", path)
        n = _read_u32(fh)
        labels = _read_array(fh, "i1", n, path)
    if not np.isin(labels, (-1, 0, 1)).all():
        raise FormatError(f"{path}: labels outside {{-1, 0, 1}}")
    return labels


def vertex_mask_bytes(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.int8)
    return b"SVMK" + struct.pack("<I", len(labels)) + labels.tobytes()


# ---------------------------------------------------------------------------
# neural mesh checkpoint


def save_neural_mesh_arrays(path, vertices, faces, appearance, geometry, coverage) -> None:
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.uint32)
    app = np.asarray(appearance, dtype=np.float64)
    geo = np.asarray(geometry, dtype=np.float64)
    cov = np.asarray(coverage, dtype=np.uint32)
    with open(path, "wb") as fh:
        fh.write(b"SNMB")
        fh.write(struct.pack("<IIIII", 1, len(v), len(f), app.shape[1], geo.shape[1]))
        v.astype("<f8").tofile(fh)
        f.astype("<u4").tofile(fh)
        app.astype("<f8").tofile(fh)
        geo.astype("<f8").tofile(fh)
        cov.astype("<u4").tofile(fh)


def load_neural_mesh_arrays(path):
    with open(path, "rb") as fh:
        _expect_magic(fh, b"SNMB", path)
        version, nv, nf, da, dg = struct.unpack("<IIIII", fh.read(20))
        if version != 1:
            raise FormatError(f"{path}: unsupported SNMB version {version}")
        v = _read_array(fh, "<f8", nv * 3, path).reshape(nv, 3)
        f = _read_array(fh, "<u4", nf * 3, path).reshape(nf, 3).astype(np.int64)
        app = _read_array(fh, "<f8", nv * da, path).reshape(nv, da)
        geo = _read_array(fh, "<f8", nv * dg, path).reshape(nv, dg)
        cov = _read_array(fh, "<u4", nv, path)
    return v, f, app, geo, cov


# ---------------------------------------------------------------------------
# network checkpoint


def save_network_arrays(path, geometry_layers, appearance_layers, log_steepness,
                        geometry_skip, appearance_skip) -> None:
    """layers: list of (weight (in, out), bias (out,)) pairs."""

    def write_header(fh, layers, skip):
        fh.write(struct.pack("<I", len(layers)))
        for w, _ in layers:
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
        fh.write(struct.pack("<I", _NO_SKIP if skip is None else skip))

    with open(path, "wb") as fh:
        fh.write(b"SMLP")
        fh.write(struct.pack("<I", 1))
        write_header(fh, geometry_layers, geometry_skip)
        write_header(fh, appearance_layers, appearance_skip)
        fh.write(struct.pack("<d", float(log_steepness)))
        for layers in (geometry_layers, appearance_layers):
            for w, b in layers:
                np.asarray(w, dtype="<f8").tofile(fh)
                np.asarray(b, dtype="<f8").tofile(fh)


def load_network_arrays(path):
    def read_header(fh):
        n = _read_u32(fh)
        dims = [struct.unpack("<II", fh.read(8)) for _ in range(n)]
        skip = _read_u32(fh)
        return dims, (None if skip == _NO_SKIP else skip)

    with open(path, "rb") as fh:
        _expect_magic(fh, b"SMLP", path)
        version = _read_u32(fh)
        if version != 1:
            raise FormatError(f"{path}: unsupported SMLP version {version}")
        geo_dims, geo_skip = read_header(fh)
        app_dims, app_skip = read_header(fh)
        (log_steepness,) = struct.unpack("<d", fh.read(8))

        def read_layers(dims):
            layers = []
            for fan_in, fan_out in dims:
                w = _read_array(fh, "<f8", fan_in * fan_out, path).reshape(fan_in, fan_out)
                b = _read_array(fh, "<f8", fan_out, path)
                layers.append((w, b))
            return layers

        geo = read_layers(geo_dims)
        app = read_layers(app_dims)
    return geo, app, log_steepness, geo_skip, app_skip


# ---------------------------------------------------------------------------
# images / pixel masks


def save_image(path, rgb: np.ndarray) -> None:
    """Save float RGB in [0, 1] (or uint8) as 8-bit PNG."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = (np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    """Load an image as float RGB in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_pixel_mask(path, mask: np.ndarray) -> None:
    """Binary mask as 8-bit PNG, 255 = object, 0 = other."""
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def load_pixel_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) >= 128).astype(np.uint8)


def pixel_mask_png_bytes(mask: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()
