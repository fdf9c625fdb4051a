"""Procedural test geometry: icospheres, boxes, bars, flat grids."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Subdivided icosahedron projected to a sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        verts, faces = _subdivide_unit(verts, faces)
    v = verts * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, faces)


def _subdivide_unit(verts: np.ndarray, faces: np.ndarray):
    cache: dict[tuple[int, int], int] = {}
    verts = list(verts)

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = verts[i] + verts[j]
            m = m / np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(m)
        return cache[key]

    new_faces = []
    for a, b, c in faces:
        ab = midpoint(a, b)
        bc = midpoint(b, c)
        ca = midpoint(c, a)
        new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), np.array(new_faces, dtype=np.int64)


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), segments=(1, 1, 1)) -> TriangleMesh:
    """Axis-aligned closed box with each face split into a grid of quads."""
    sx, sy, sz = [float(s) for s in size]
    nx, ny, nz = [max(1, int(n)) for n in segments]
    half = np.array([sx, sy, sz]) / 2.0
    verts: list[tuple[float, float, float]] = []
    vid: dict[tuple[float, float, float], int] = {}
    faces = []

    def add_vertex(p):
        key = (round(p[0], 12), round(p[1], 12), round(p[2], 12))
        if key not in vid:
            vid[key] = len(verts)
            verts.append(key)
        return vid[key]

    def add_plane(origin, du, dv, nu, nv):
        # Quad grid spanned by du, dv; triangles wound so normals face
        # along cross(du, dv).
        for i in range(nu):
            for j in range(nv):
                p00 = origin + du * (i / nu) + dv * (j / nv)
                p10 = origin + du * ((i + 1) / nu) + dv * (j / nv)
                p01 = origin + du * (i / nu) + dv * ((j + 1) / nv)
                p11 = origin + du * ((i + 1) / nu) + dv * ((j + 1) / nv)
                a, b_, c, d = (add_vertex(p) for p in (p00, p10, p11, p01))
                faces.append([a, b_, c])
                faces.append([a, c, d])

    ex = np.array([sx, 0, 0])
    ey = np.array([0, sy, 0])
    ez = np.array([0, 0, sz])
    o = -half
    add_plane(o + ez, ex, ey, nx, ny)   # +z
    add_plane(o, ey, ex, ny, nx)        # -z
    add_plane(o + ex, ey, ez, ny, nz)   # +x
    add_plane(o, ez, ey, nz, ny)        # -x
    add_plane(o + ey, ez, ex, nz, nx)   # +y
    add_plane(o, ex, ez, nx, nz)        # -y
    v = np.array(verts, dtype=np.float64) + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.array(faces, dtype=np.int64))


def bar(length: float = 4.0, width: float = 1.0, segments: int = 8) -> TriangleMesh:
    """Long box along x, subdivided lengthwise (bend-test fixture)."""
    return box(size=(length, width, width), segments=(segments, 1, 1))


def flat_grid(nx: int = 4, ny: int = 4, spacing: float = 1.0, z: float = 0.0) -> TriangleMesh:
    """Open planar grid in the z = const plane, normals +z."""
    xs = np.arange(nx + 1) * spacing
    ys = np.arange(ny + 1) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, float(z))], axis=1)
    faces = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b = (i + 1) * (ny + 1) + j
            c = (i + 1) * (ny + 1) + j + 1
            d = i * (ny + 1) + j + 1
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


def compound_two_part(gap: float = 0.5) -> tuple[TriangleMesh, np.ndarray]:
    """Sphere + box side by side; returns (mesh, per-vertex part labels).

    Labels: 1 for the sphere (the "object"), 0 for the box.
    """
    sphere = icosphere(subdivisions=3, radius=0.7, center=(-0.7 - gap / 2, 0.0, 0.0))
    cube = box(size=(1.0, 1.0, 1.0), center=(0.5 + gap / 2, 0.0, 0.0), segments=(2, 2, 2))
    v = np.concatenate([sphere.vertices, cube.vertices])
    f = np.concatenate([sphere.faces, cube.faces + len(sphere.vertices)])
    labels = np.concatenate(
        [np.ones(len(sphere.vertices), dtype=np.int8), np.zeros(len(cube.vertices), dtype=np.int8)]
    )
    return TriangleMesh(v, f), labels
