import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vice.depth import (
    DepthImageFiles,
    DepthInterpolant,
    FloorPlaneConfig,
    FloorPlaneDepth,
    PointCloudDepth,
    SensorDepth,
    SparseDepthImage,
    bilinear,
    densify,
    depth_from_pointcloud,
    floor_depth,
    interpolate_at,
    read_depth_image,
    read_ply,
    write_depth_image,
    write_ply,
)
from vice.errors import (
    EmptyDepthImageError,
    InsufficientSupportError,
    MalformedRowError,
    MissingInputError,
    NoIntersectionError,
)
from vice.geometry import Pose, inverse, project, rotation_exp


def looking_down(pitch_deg: float, altitude: float, yaw: float = 0.0, xy=(0.0, 0.0)) -> Pose:
    """Camera -> Fixed for a camera at ``altitude`` pitched ``pitch_deg`` below
    the horizon (90 = straight down), image x along Fixed -y before yaw."""
    b = np.radians(pitch_deg)
    forward = np.array([np.cos(b), 0.0, -np.sin(b)])
    right = np.array([0.0, -1.0, 0.0])
    down = np.cross(forward, right)
    R = np.column_stack([right, down, forward])
    Rz = np.array([[np.cos(yaw), -np.sin(yaw), 0], [np.sin(yaw), np.cos(yaw), 0], [0, 0, 1]])
    return Pose(Rz @ R, [xy[0], xy[1], altitude])


def ray_march_floor(cam, pose: Pose, uv, t_max=1e4):
    """Bisect the depth along the viewing ray for the Fixed z = 0 crossing."""
    ray = cam.unproject_points([uv], 1.0)[0]
    height = lambda t: pose.apply(t * ray)[2]  # noqa: E731
    lo, hi = 0.0, 1.0
    while height(hi) > 0:
        hi *= 2.0
        if hi > t_max:
            return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if height(mid) > 0 else (lo, mid)
    return 0.5 * (lo + hi) * ray


# floor plane -----------------------------------------------------------------

def test_floor_straight_down(pinhole_cam):
    cfg = FloorPlaneConfig(looking_down(90, 1.5))
    assert np.allclose(floor_depth(cfg, pinhole_cam, (320, 240)), [0, 0, 1.5], atol=1e-12)


def test_floor_pitched_45(pinhole_cam):
    cfg = FloorPlaneConfig(looking_down(45, 2.0))
    p = floor_depth(cfg, pinhole_cam, (320, 240))
    assert abs(np.linalg.norm(p) - 2 * np.sqrt(2)) < 1e-12


def test_floor_matches_ray_march(euroc_cam):
    pose = looking_down(30, 1.0)
    cfg = FloorPlaneConfig(pose)
    for uv in [(100.0, 400.0), (700.5, 300.25), (367.0, 470.0)]:
        ours = floor_depth(cfg, euroc_cam, uv)
        oracle = ray_march_floor(euroc_cam, pose, uv)
        assert np.linalg.norm(ours - oracle) < 1e-6


def test_floor_no_intersection(pinhole_cam):
    cfg = FloorPlaneConfig(looking_down(10, 1.0))
    with pytest.raises(NoIntersectionError):
        floor_depth(cfg, pinhole_cam, (320, 0))  # above the horizon
    level = FloorPlaneConfig(looking_down(0, 1.0))
    with pytest.raises(NoIntersectionError):
        floor_depth(level, pinhole_cam, (320, 240))  # parallel to the floor


def test_floor_altitude_override(pinhole_cam):
    pose = looking_down(90, 5.0)
    cfg = FloorPlaneConfig(pose, camera_altitude=2.0)
    assert np.allclose(floor_depth(cfg, pinhole_cam, (320, 240)), [0, 0, 2.0])
    with pytest.raises(ValueError):
        FloorPlaneConfig(pose, camera_altitude=-1.0)


@given(
    rv=st.tuples(*[st.floats(-3, 3)] * 3),
    alt=st.floats(0.2, 20),
    u=st.floats(0, 639.999),
    v=st.floats(0, 479.999),
    shift=st.tuples(st.floats(-50, 50), st.floats(-50, 50)),
)
def test_floor_postconditions(pinhole_cam, rv, alt, u, v, shift):
    pose = Pose(rotation_exp(np.array(rv)), [0.0, 0.0, alt])
    cfg = FloorPlaneConfig(pose)
    ray = pinhole_cam.unproject_points([(u, v)], 1.0)[0]
    descends = (pose.rotation @ ray)[2] < 0
    if not descends:
        with pytest.raises(NoIntersectionError):
            floor_depth(cfg, pinhole_cam, (u, v))
        return
    p = floor_depth(cfg, pinhole_cam, (u, v))
    assert abs(pose.apply(p)[2]) < 1e-9 * max(1.0, np.linalg.norm(p))
    assert np.linalg.norm(np.cross(p, ray)) < 1e-9 * max(1.0, np.linalg.norm(p))
    moved = FloorPlaneConfig(Pose(pose.rotation, [shift[0], shift[1], alt]))
    assert np.allclose(floor_depth(moved, pinhole_cam, (u, v)), p, rtol=0, atol=1e-12)


# point cloud -----------------------------------------------------------------

def test_single_point_on_axis(pinhole_cam):
    sparse = depth_from_pointcloud([[0, 0, 4.0]], Pose.identity(), pinhole_cam)
    rows, cols, vals = sparse.samples()
    assert (rows.tolist(), cols.tolist(), vals.tolist()) == ([240], [320], [4.0])


def test_nearest_wins(pinhole_cam):
    sparse = depth_from_pointcloud([[0, 0, 5.0], [0, 0, 3.0], [0.001, 0, 5.0]], Pose.identity(), pinhole_cam)
    assert len(sparse) == 1 and sparse.depth[240, 320] == 3.0


def test_points_behind_or_outside_dropped(pinhole_cam):
    with pytest.raises(EmptyDepthImageError):
        depth_from_pointcloud([[0, 0, -1.0], [100, 0, 1.0]], Pose.identity(), pinhole_cam)
    with pytest.raises(EmptyDepthImageError):
        depth_from_pointcloud(np.empty((0, 3)), Pose.identity(), pinhole_cam)


def test_grid_matches_per_point_projection(euroc_cam):
    cam_to_fixed = looking_down(60, 1.5)
    g = np.linspace(0.6, 1.5, 10)
    xx, yy = np.meshgrid(g, g - 1.05)
    cloud = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(100)])
    sparse = depth_from_pointcloud(cloud, inverse(cam_to_fixed), euroc_cam)
    expected = {}
    for X in cloud:
        pc = inverse(cam_to_fixed).apply(X)
        u, v = project(euroc_cam, pc)
        key = (int(np.floor(v + 0.5)), int(np.floor(u + 0.5)))
        if 0 <= key[0] < euroc_cam.height and 0 <= key[1] < euroc_cam.width:
            expected[key] = min(expected.get(key, np.inf), pc[2])
    rows, cols, vals = sparse.samples()
    got = {(int(r), int(c)): float(d) for r, c, d in zip(rows, cols, vals)}
    assert len(expected) == 100
    assert got.keys() == expected.keys()
    assert all(abs(got[k] - expected[k]) < 1e-12 for k in got)


# densification ---------------------------------------------------------------

def _sparse(shape, rows, cols, values):
    d = np.full(shape, np.nan)
    d[rows, cols] = values
    return SparseDepthImage(d)


def test_densify_constant():
    rng = np.random.default_rng(0)
    rows, cols = rng.integers(0, 40, 30), rng.integers(0, 60, 30)
    dense = densify(_sparse((40, 60), rows, cols, 5.0))
    finite = dense[np.isfinite(dense)]
    assert finite.size > 30 and np.allclose(finite, 5.0, atol=1e-12)


def test_densify_reproduces_plane():
    rng = np.random.default_rng(1)
    rows, cols = rng.integers(0, 40, 50), rng.integers(0, 60, 50)
    dense = densify(_sparse((40, 60), rows, cols, 2 + 0.01 * cols))
    vv, uu = np.mgrid[0:40, 0:60]
    ok = np.isfinite(dense)
    assert np.allclose(dense[ok], 2 + 0.01 * uu[ok], atol=1e-12)


def test_densify_keeps_samples_and_never_extrapolates():
    d = np.full((20, 20), np.nan)
    d[5, 5], d[5, 15], d[15, 5] = 1.0, 2.0, 3.0
    dense = densify(SparseDepthImage(d))
    assert dense[5, 5] == 1.0 and dense[5, 15] == 2.0 and dense[15, 5] == 3.0
    assert np.isnan(dense[15, 15]) and np.isnan(dense[0, 0])


def test_densify_insufficient_support():
    d = np.full((10, 10), np.nan)
    d[1, 1], d[2, 2] = 1.0, 1.0
    with pytest.raises(InsufficientSupportError):
        densify(SparseDepthImage(d))
    d[3, 3] = 1.0  # collinear
    with pytest.raises(InsufficientSupportError):
        densify(SparseDepthImage(d))


def barycentric_oracle(points, values, q):
    """Value at ``q`` on a Delaunay triangle containing it, checking the
    empty-circumcircle property by brute force."""
    from itertools import combinations

    best = []
    for idx in combinations(range(len(points)), 3):
        a, b, c = points[list(idx)]
        M = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        l1, l2 = np.linalg.solve(M, q - a)
        if min(l1, l2, 1 - l1 - l2) < -1e-12:
            continue
        # empty circumcircle
        A = np.array([[*(b - a)], [*(c - a)]]) * 2
        rhs = np.array([b @ b - a @ a, c @ c - a @ a])
        centre = np.linalg.solve(A, rhs)
        r = np.linalg.norm(a - centre)
        if np.all(np.linalg.norm(points - centre, axis=1) >= r - 1e-9):
            best.append((1 - l1 - l2) * values[idx[0]] + l1 * values[idx[1]] + l2 * values[idx[2]])
    return best


def test_interpolant_matches_barycentric_oracle():
    rng = np.random.default_rng(7)
    rows, cols = rng.integers(0, 30, 25), rng.integers(0, 30, 25)
    vals = rng.uniform(1, 4, 25)
    sparse = _sparse((30, 30), rows, cols, vals)
    r, c, v = sparse.samples()
    pts = np.column_stack([c, r]).astype(float)
    interp = DepthInterpolant(sparse)
    for q in rng.uniform(5, 25, (20, 2)):
        candidates = barycentric_oracle(pts, v, q)
        got = interp(np.array([q[0]]), np.array([q[1]]))[0]
        local = interpolate_at(sparse, q[0], q[1], window=3)
        if not candidates:
            assert np.isnan(got) and np.isnan(local)
            continue
        assert min(abs(got - x) for x in candidates) < 1e-9
        assert min(abs(local - x) for x in candidates) < 1e-9


def test_interpolate_at_sample_is_exact():
    d = np.full((10, 10), np.nan)
    d[2, 3], d[7, 1], d[5, 8] = 1.25, 2.5, 3.75
    assert interpolate_at(SparseDepthImage(d), 3.0, 2.0) == 1.25
    assert np.isnan(interpolate_at(SparseDepthImage(d), 0.0, 0.0))


def test_sparse_rejects_nonpositive():
    with pytest.raises(ValueError):
        SparseDepthImage(np.array([[0.0, np.nan]]))


def test_floor_and_cloud_agree_on_flat_floor(euroc_cam):
    """Depth from a dense floor scan matches the ray-plane depth; the residual
    comes from rounding projected points to pixel centres."""
    pose = looking_down(80, 1.2)
    g = np.arange(-1.5, 1.5, 0.004)
    xx, yy = np.meshgrid(g, g)
    cloud = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    zmap = PointCloudDepth(cloud, pose)
    floor = FloorPlaneDepth(FloorPlaneConfig(pose))
    rng = np.random.default_rng(3)
    for uv in rng.uniform([150, 100], [600, 380], (40, 2)):
        a = floor.point_at(euroc_cam, uv, 0)
        b = zmap.point_at(euroc_cam, uv, 0)
        assert abs(a[2] - b[2]) < 1e-3


def test_cloud_provider_outside_support(pinhole_cam):
    zmap = PointCloudDepth([[0, 0, 4.0], [0.1, 0, 4.0], [0, 0.1, 4.0]], Pose.identity())
    with pytest.raises(NoIntersectionError):
        zmap.point_at(pinhole_cam, (10.0, 10.0), 0)


# sensor ----------------------------------------------------------------------

def test_sensor_bilinear(pinhole_cam):
    img = np.add.outer(np.arange(480) * 0.01, np.arange(640) * 0.001) + 1.0
    sensor = SensorDepth({0: img})
    p = sensor.point_at(pinhole_cam, (100.5, 200.25), 0)
    assert abs(p[2] - (1 + 2.0025 + 0.1005)) < 1e-12
    assert np.isnan(bilinear(img, -1, 0))
    with pytest.raises(MissingInputError):
        sensor.point_at(pinhole_cam, (1, 1), 3)
    hole = img.copy()
    hole[10:12, 10:12] = np.nan
    with pytest.raises(NoIntersectionError):
        SensorDepth({0: hole}).point_at(pinhole_cam, (10.5, 10.5), 0)


# files -----------------------------------------------------------------------

def test_ply_round_trip(tmp_path):
    pts = np.array([[0.5, -1.25, 0.0], [1e-3, 2.0, 3.5]])
    write_ply(tmp_path / "c.ply", pts)
    assert np.array_equal(read_ply(tmp_path / "c.ply"), pts)


def test_ply_errors(tmp_path):
    with pytest.raises(MissingInputError):
        read_ply(tmp_path / "none.ply")
    (tmp_path / "bad.ply").write_text("nope\n")
    with pytest.raises(MalformedRowError):
        read_ply(tmp_path / "bad.ply")


def test_depth_image_round_trip(tmp_path):
    d = np.array([[1.5, np.nan, 2.0], [0.25, 3.0, 4.0]])
    write_depth_image(tmp_path / "d.bin", d)
    raw = (tmp_path / "d.bin").read_bytes()
    assert raw[:8] == (3).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert len(raw) == 8 + 4 * 6
    back = read_depth_image(tmp_path / "d.bin")
    assert np.array_equal(back, d, equal_nan=True)
    assert np.array_equal(DepthImageFiles({7: tmp_path / "d.bin"})[7], d, equal_nan=True)
    (tmp_path / "short.bin").write_bytes(raw[:-4])
    with pytest.raises(MalformedRowError):
        read_depth_image(tmp_path / "short.bin")
