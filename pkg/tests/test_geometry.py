import numpy as np
import pytest

from serf.geometry import (
    BehindCameraError,
    CameraModel,
    InvalidDepthError,
    KnnIndex,
    MeshValidationError,
    TriangleMesh,
    build_knn_index,
    knn_query,
    raycast,
    raycast_batch,
    signed_distance,
)
from serf.shapes import box, flat_grid, icosphere


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# ---------------------------------------------------------------------------
# normals


def test_flat_grid_interior_normal_is_z():
    g = flat_grid(4, 4)
    interior = 2 * 5 + 2  # vertex (2, 2)
    assert np.allclose(g.vertex_normals[interior], [0, 0, 1], atol=1e-12)


def test_cube_corner_normal_is_diagonal():
    b = box(size=(2, 2, 2))
    corner = np.argmin(np.abs(b.vertices - np.array([1.0, 1.0, 1.0])).sum(axis=1))
    expect = np.ones(3) / np.sqrt(3)
    assert np.linalg.norm(b.vertex_normals[corner] - expect) < 1e-6


def test_icosphere_normals_near_radial():
    m = icosphere(3)
    radial = m.vertices / np.linalg.norm(m.vertices, axis=1)[:, None]
    cosang = np.clip((m.vertex_normals * radial).sum(axis=1), -1, 1)
    assert np.degrees(np.arccos(cosang)).max() < 1.0


def test_normals_rotation_equivariant():
    rng = np.random.default_rng(7)
    m = icosphere(2)
    r = random_rotation(rng)
    rotated = m.transformed(rotation=r)
    assert np.abs(rotated.vertex_normals - m.vertex_normals @ r.T).max() < 1e-9


def test_isolated_vertex_flagged_zero_normal():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5.0]])
    faces = np.array([[0, 1, 2]])
    with pytest.warns(UserWarning, match="isolated"):
        m = TriangleMesh(verts, faces)
    assert m.isolated_vertices[3]
    assert np.all(m.vertex_normals[3] == 0)


def test_degenerate_face_rejected():
    verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0], [0, 0, 1]])
    faces = np.array([[0, 1, 2], [0, 1, 3]])
    with pytest.raises(MeshValidationError):
        TriangleMesh(verts, faces)


def test_adjacency_inverts_faces():
    m = icosphere(1)
    for v in range(m.num_vertices):
        for f in m.vertex_faces[v]:
            assert v in m.faces[f]
    total = sum(len(a) for a in m.vertex_faces)
    assert total == 3 * m.num_faces


# ---------------------------------------------------------------------------
# cameras


def make_camera():
    return CameraModel(fx=100, fy=100, cx=50, cy=50, rotation=np.eye(3),
                       translation=np.zeros(3), width=100, height=100)


def test_project_optical_axis():
    cam = make_camera()
    for depth in (0.5, 1.0, 7.3):
        pix, z = cam.project([0, 0, depth])
        assert np.allclose(pix, [50, 50]) and z == depth


def test_project_arithmetic():
    cam = make_camera()
    pix, z = cam.project([0.1, 0, 1.0])
    assert np.allclose(pix, [60, 50]) and z == 1.0


def test_project_behind_camera_raises():
    with pytest.raises(BehindCameraError):
        make_camera().project([0, 0, -1.0])


def test_backproject_center_ray():
    cam = CameraModel.look_at(eye=[1, 2, 3], target=[0, 0, 0], fx=120, width=128, height=128)
    p = cam.backproject([cam.cx, cam.cy], 2.5)
    assert np.allclose(p, cam.center + 2.5 * cam.optical_axis, atol=1e-12)


def test_backproject_invalid_depth():
    with pytest.raises(InvalidDepthError):
        make_camera().backproject([10, 10], float("nan"))


def test_project_backproject_round_trip():
    rng = np.random.default_rng(3)
    cam = CameraModel.look_at(eye=[2, 1, 4], target=[0.3, -0.2, 0], fx=90, width=160, height=120)
    pts = rng.normal(size=(1000, 3))
    pix, z, valid = cam.project_batch(pts)
    back = cam.backproject_batch(pix[valid], z[valid])
    rel = np.abs(back - pts[valid]).max() / np.abs(pts[valid]).max()
    assert rel < 1e-9


def test_backproject_matches_matrix_inverse_oracle():
    rng = np.random.default_rng(11)
    cam = CameraModel.look_at(eye=[0, 1, 5], target=[0, 0, 0], fx=80, width=100, height=100)
    k = np.array([[cam.fx, 0, cam.cx], [0, cam.fy, cam.cy], [0, 0, 1]])
    for _ in range(50):
        pixel = rng.uniform(0, 100, size=2)
        depth = rng.uniform(0.2, 5.0)
        ours = cam.backproject(pixel, depth)
        cam_pt = np.linalg.inv(k) @ np.array([pixel[0], pixel[1], 1.0]) * depth
        oracle = np.linalg.inv(cam.rotation) @ (cam_pt - cam.translation)
        assert np.abs(ours - oracle).max() < 1e-9


# ---------------------------------------------------------------------------
# knn


def brute_knn(points, q, k):
    d = np.linalg.norm(points - q, axis=1)
    order = np.lexsort((np.arange(len(points)), d))
    return order[: min(k, len(points))]


def test_knn_query_exact_point():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0.0]])
    idx, dist = knn_query(build_knn_index(pts), np.array([1, 0, 0.0]), 1)
    assert idx[0] == 1 and dist[0] == 0


def test_knn_k_exceeds_n():
    pts = np.arange(9, dtype=float).reshape(3, 3)
    idx, dist = knn_query(build_knn_index(pts), np.zeros(3), 10)
    assert len(idx) == 3 and (np.diff(dist) >= 0).all()


def test_knn_tie_breaks_by_index():
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])
    idx, dist = knn_query(build_knn_index(pts), np.zeros(3), 2)
    assert list(idx) == [0, 1]
    assert np.allclose(dist, 1.0)


def test_knn_matches_brute_force():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(1000, 3))
    index = build_knn_index(pts)
    queries = rng.normal(size=(100, 3))
    got_idx, got_dist = index.query(queries, 8)
    for i, q in enumerate(queries):
        expect = brute_knn(pts, q, 8)
        assert np.array_equal(got_idx[i], expect)
        assert np.abs(got_dist[i] - np.linalg.norm(pts[expect] - q, axis=1)).max() < 1e-12


def test_knn_empty_errors():
    with pytest.raises(ValueError):
        KnnIndex(np.zeros((0, 3)))


# ---------------------------------------------------------------------------
# raycast


def oracle_intersect(origin, direction, mesh):
    """Independent all-triangle intersection via per-triangle linear solve."""
    best = (np.inf, -1, None)
    for fi, (a, b, c) in enumerate(mesh.vertices[mesh.faces]):
        mat = np.stack([b - a, c - a, -direction], axis=1)
        if abs(np.linalg.det(mat)) < 1e-14:
            continue
        u, v, t = np.linalg.solve(mat, origin - a)
        if u >= -1e-9 and v >= -1e-9 and u + v <= 1 + 1e-9 and t > 1e-9:
            if t < best[0]:
                best = (t, fi, np.array([1 - u - v, u, v]))
    return best


def test_raycast_sphere_distance():
    m = icosphere(3)
    hit = raycast(m, np.array([0, 0, 3.0]), np.array([0, 0, -1.0]))
    assert hit is not None and abs(hit.t - 2.0) <= 0.01


def test_raycast_miss():
    m = icosphere(1)
    assert raycast(m, np.array([0, 0, 3.0]), np.array([0, 0, 1.0])) is None


def test_raycast_matches_oracle():
    rng = np.random.default_rng(9)
    m = icosphere(1)
    o = rng.normal(size=(200, 3)) * 2.0
    d = rng.normal(size=(200, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    bt, bf, _ = raycast_batch(m, o, d)
    for i in range(200):
        t_o, f_o, _ = oracle_intersect(o[i], d[i], m)
        hit = raycast(m, o[i], d[i])
        if f_o < 0:
            assert hit is None and bf[i] == -1
        else:
            assert hit is not None
            assert hit.face_index == f_o == bf[i]
            assert abs(hit.t - t_o) < 1e-9 and abs(bt[i] - t_o) < 1e-9


def test_raycast_vertex_distance_property():
    m = icosphere(2)
    origin = np.array([0, 0, 4.0])
    # Vertices on the front hemisphere are unoccluded from this origin.
    front = m.vertices[m.vertices[:, 2] > 0.3]
    dirs = front - origin
    dist = np.linalg.norm(dirs, axis=1)
    t, _, _ = raycast_batch(m, origin, dirs / dist[:, None])
    assert np.abs(t - dist).max() < 1e-6


def test_raycast_zero_direction_errors():
    with pytest.raises(ValueError):
        raycast(icosphere(0), np.zeros(3), np.zeros(3))


# ---------------------------------------------------------------------------
# signed distance


def test_sdf_on_vertex_is_zero():
    m = icosphere(2)
    assert abs(signed_distance(m, m.vertices[17])) < 1e-12


def test_sdf_sphere_inside_outside():
    m = icosphere(3)
    assert abs(signed_distance(m, np.array([0, 0, 0.5])) - (-0.5)) < 0.01
    assert abs(signed_distance(m, np.array([0, 0, 2.0])) - 1.0) < 0.01


def test_sdf_lipschitz():
    rng = np.random.default_rng(13)
    m = icosphere(2)
    p = rng.normal(size=(200, 3)) * 1.5
    q = p + rng.normal(size=(200, 3)) * 0.1
    dp = signed_distance(m, p)
    dq = signed_distance(m, q)
    gap = np.abs(dp - dq) - np.linalg.norm(p - q, axis=1)
    assert gap.max() < 1e-9


def test_sdf_open_mesh_warns():
    g = flat_grid(2, 2)
    with pytest.warns(UserWarning, match="sign unreliable"):
        g.distance_field()


def test_sdf_matches_brute_force_unsigned():
    rng = np.random.default_rng(21)
    m = icosphere(2)
    pts = rng.normal(size=(50, 3)) * 1.4
    got = np.abs(signed_distance(m, pts))
    tri = m.vertices[m.faces]
    for i, p in enumerate(pts):
        # Dense surface sampling oracle for the unsigned distance.
        r1 = np.sqrt(rng.uniform(size=400))[:, None]
        r2 = rng.uniform(size=400)[:, None]
        f = rng.integers(0, len(tri), size=400)
        samples = (1 - r1) * tri[f, 0] + r1 * (1 - r2) * tri[f, 1] + r1 * r2 * tri[f, 2]
        approx = np.linalg.norm(samples - p, axis=1).min()
        assert got[i] <= approx + 1e-12
        assert got[i] >= approx - 0.2  # sampling slack
