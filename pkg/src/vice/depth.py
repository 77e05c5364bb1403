"""Depth for the reference pixel: floor plane, point-cloud depth map, or sensor.

The floor is the ``z = 0`` plane of the Fixed frame. Camera poses handed to
the providers map Camera coordinates into the Fixed frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from collections.abc import Mapping as MappingABC
from typing import Mapping, Optional

import numpy as np
from scipy.spatial import Delaunay
from scipy.spatial import QhullError

from . import kernels
from .errors import (
    EmptyDepthImageError,
    InsufficientSupportError,
    MalformedRowError,
    MissingInputError,
    NoIntersectionError,
)
from .geometry import CameraModel, Pose, inverse

FLOOR = "floor"
DEPTH_MAP = "zmap"
SENSOR = "sensor"


# floor plane ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FloorPlaneConfig:
    """Camera pose at the first frame (Camera -> Fixed) and its height above
    the floor. When ``camera_altitude`` is given it replaces the z component
    of the pose translation, so the floor always sits at Fixed ``z = 0``."""

    initial_camera_pose: Pose
    camera_altitude: Optional[float] = None

    def __post_init__(self):
        pose = self.initial_camera_pose
        z2 = float(pose.translation[2]) if self.camera_altitude is None else float(self.camera_altitude)
        if not z2 > 0:
            raise ValueError(f"camera altitude must be positive, got {z2}")
        d = np.array(pose.translation)
        d[2] = z2
        object.__setattr__(self, "initial_camera_pose", Pose(pose.rotation, d, pose.from_frame, pose.to_frame))
        object.__setattr__(self, "camera_altitude", z2)


def floor_depth(cfg: FloorPlaneConfig, cam: CameraModel, p, camera_pose: Optional[Pose] = None) -> np.ndarray:
    """Camera-frame point where the viewing ray of pixel ``p`` meets the floor.

    ``camera_pose`` (Camera -> Fixed) defaults to the configured initial pose;
    pass the pose of a later frame when a track respawns mid-sequence.
    """
    pose = cfg.initial_camera_pose if camera_pose is None else camera_pose
    altitude = float(pose.translation[2])
    if not altitude > 0:
        raise NoIntersectionError(f"camera is not above the floor (altitude {altitude})")
    ray = cam.unproject_points([tuple(p)], 1.0)[0]
    drop = -float(pose.rotation[2] @ ray)
    if not drop > 0:
        raise NoIntersectionError(
            f"ray through pixel ({p[0]:.3f}, {p[1]:.3f}) does not descend to the floor (drop {drop:.3e})"
        )
    return (altitude / drop) * ray


# sparse / dense depth images ----------------------------------------------

@dataclass(frozen=True, eq=False)
class SparseDepthImage:
    depth: np.ndarray  # (height, width); NaN where no sample

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth image must be 2-D, got shape {d.shape}")
        present = d[np.isfinite(d)]
        if np.any(present <= 0):
            raise ValueError("depth samples must be positive")
        object.__setattr__(self, "depth", d)

    @property
    def shape(self):
        return self.depth.shape

    def samples(self):
        """``(rows, cols, values)`` of the present samples."""
        rows, cols = np.nonzero(np.isfinite(self.depth))
        return rows, cols, self.depth[rows, cols]

    def __len__(self):
        return int(np.count_nonzero(np.isfinite(self.depth)))


class DepthInterpolant:
    """Piecewise-linear interpolant over a Delaunay triangulation of samples.

    Evaluation outside the convex hull returns NaN.
    """

    def __init__(self, sparse: SparseDepthImage):
        rows, cols, values = sparse.samples()
        if len(values) < 3:
            raise InsufficientSupportError(f"need at least 3 depth samples, got {len(values)}")
        pts = np.column_stack([cols, rows]).astype(np.float64)
        centered = pts - pts.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
            raise InsufficientSupportError("depth samples are collinear")
        try:
            self.tri = Delaunay(pts)
        except QhullError as e:  # pragma: no cover - rank check catches the usual cases
            raise InsufficientSupportError(f"triangulation failed: {e}") from e
        self.values = values
        self.shape = sparse.shape

    def __call__(self, u, v) -> np.ndarray:
        q = np.column_stack([np.ravel(u), np.ravel(v)]).astype(np.float64)
        simplex = self.tri.find_simplex(q)
        out = np.full(len(q), np.nan)
        inside = simplex >= 0
        if inside.any():
            s = simplex[inside]
            T = self.tri.transform[s]
            b = np.einsum("nij,nj->ni", T[:, :2, :], q[inside] - T[:, 2, :])
            bary = np.column_stack([b, 1.0 - b.sum(axis=1)])
            out[inside] = np.einsum("ni,ni->n", bary, self.values[self.tri.simplices[s]])
        return out.reshape(np.shape(u))


def interpolate_at(sparse: SparseDepthImage, u: float, v: float, window: int = 8) -> float:
    """Interpolated depth at one pixel, triangulating only nearby samples.

    A triangle of the local triangulation whose circumcircle lies inside the
    window is also a triangle of the full triangulation, so the result matches
    ``DepthInterpolant`` without triangulating the whole image. The window
    grows until that holds or covers the image.
    """
    d = sparse.depth
    h, w = d.shape
    if u == int(u) and v == int(v) and 0 <= u < w and 0 <= v < h and np.isfinite(d[int(v), int(u)]):
        return float(d[int(v), int(u)])
    while True:
        c0, c1 = max(int(np.floor(u)) - window, 0), min(int(np.ceil(u)) + window + 1, w)
        r0, r1 = max(int(np.floor(v)) - window, 0), min(int(np.ceil(v)) + window + 1, h)
        full = c0 == 0 and r0 == 0 and c1 == w and r1 == h
        sub = SparseDepthImage(d[r0:r1, c0:c1])
        try:
            interp = DepthInterpolant(sub)
        except InsufficientSupportError:
            if full:
                raise
            window *= 2
            continue
        q = np.array([[u - c0, v - r0]])
        s = int(interp.tri.find_simplex(q)[0])
        if s >= 0:
            tri = interp.tri.points[interp.tri.simplices[s]]
            centre, radius = _circumcircle(tri)
            inner = (centre[0] - radius >= 0 or c0 == 0) and (centre[0] + radius <= c1 - c0 - 1 or c1 == w)
            inner = inner and (centre[1] - radius >= 0 or r0 == 0) and (centre[1] + radius <= r1 - r0 - 1 or r1 == h)
            if inner or full:
                return float(interp(q[:, 0], q[:, 1])[0])
        elif full:
            return float("nan")
        window *= 2


def _circumcircle(tri: np.ndarray):
    a, b, c = tri
    bx, by = b - a
    cx, cy = c - a
    den = 2.0 * (bx * cy - by * cx)
    ux = (cy * (bx * bx + by * by) - by * (cx * cx + cy * cy)) / den
    uy = (bx * (cx * cx + cy * cy) - cx * (bx * bx + by * by)) / den
    return a + np.array([ux, uy]), float(np.hypot(ux, uy))


def densify(sparse: SparseDepthImage) -> np.ndarray:
    """Dense depth image; NaN outside the convex hull of the samples."""
    interp = DepthInterpolant(sparse)
    h, w = sparse.shape
    vv, uu = np.mgrid[0:h, 0:w]
    dense = interp(uu.astype(np.float64), vv.astype(np.float64))
    known = np.isfinite(sparse.depth)
    dense[known] = sparse.depth[known]
    return dense


def _visible(cam: CameraModel, P: np.ndarray) -> np.ndarray:
    """Mask of camera-frame points in front of the camera and inside the
    radius where the distortion model is still one-to-one."""
    z = P[:, 2]
    ok = z > 0
    r = np.full(len(P), np.inf)
    r[ok] = np.hypot(P[ok, 0] / z[ok], P[ok, 1] / z[ok])
    return ok & (r < cam.max_valid_radius)


def depth_from_pointcloud(cloud, camera_pose: Pose, cam: CameraModel) -> SparseDepthImage:
    """Z-buffer a Fixed-frame point cloud into a sparse depth image.

    ``camera_pose`` maps Fixed coordinates into the camera frame. Each pixel
    keeps the nearest point that rounds onto it.
    """
    cloud = np.atleast_2d(np.asarray(cloud, dtype=np.float64))
    if cloud.size == 0:
        raise EmptyDepthImageError("point cloud is empty")
    P = camera_pose.apply(cloud)
    P = P[_visible(cam, P)]
    if len(P) == 0:
        raise EmptyDepthImageError("no cloud point lies in front of the camera")
    uv = cam.project_points(P)
    grid = kernels.zbuffer(uv[:, 0], uv[:, 1], P[:, 2], cam.width, cam.height)
    if not np.isfinite(grid).any():
        raise EmptyDepthImageError("no cloud point projects inside the image")
    return SparseDepthImage(grid)


# providers -----------------------------------------------------------------

class FloorPlaneDepth:
    kind = FLOOR

    def __init__(self, cfg: FloorPlaneConfig):
        self.cfg = cfg

    @property
    def initial_camera_pose(self) -> Pose:
        return self.cfg.initial_camera_pose

    def point_at(self, cam, pixel, frame: int, camera_pose: Optional[Pose] = None) -> np.ndarray:
        return floor_depth(self.cfg, cam, pixel, camera_pose)


class PointCloudDepth:
    """Depth map from a scan of the scene, rebuilt for each query pose."""

    kind = DEPTH_MAP

    def __init__(self, cloud, initial_camera_pose: Pose):
        self.cloud = np.asarray(cloud, dtype=np.float64)
        self.initial_camera_pose = initial_camera_pose

    def depth_image(self, cam, camera_pose: Pose) -> SparseDepthImage:
        return depth_from_pointcloud(self.cloud, inverse(camera_pose), cam)

    def point_at(self, cam, pixel, frame: int, camera_pose: Optional[Pose] = None) -> np.ndarray:
        pose = self.initial_camera_pose if camera_pose is None else camera_pose
        z = interpolate_at(self.depth_image(cam, pose), float(pixel[0]), float(pixel[1]))
        if not np.isfinite(z):
            raise NoIntersectionError(
                f"pixel ({pixel[0]:.3f}, {pixel[1]:.3f}) lies outside the support of the projected cloud"
            )
        return cam.unproject_points([tuple(pixel)], z)[0]


class SensorDepth:
    """Per-frame dense depth images from a depth camera, sampled bilinearly."""

    kind = SENSOR
    initial_camera_pose = None

    def __init__(self, images: Mapping[int, np.ndarray]):
        self.images = images

    def point_at(self, cam, pixel, frame: int, camera_pose: Optional[Pose] = None) -> np.ndarray:
        if frame not in self.images:
            raise MissingInputError(f"no depth image for frame {frame}")
        z = bilinear(np.asarray(self.images[frame], dtype=np.float64), pixel[0], pixel[1])
        if not (np.isfinite(z) and z > 0):
            raise NoIntersectionError(f"no valid sensor depth at ({pixel[0]:.3f}, {pixel[1]:.3f}) in frame {frame}")
        return cam.unproject_points([tuple(pixel)], z)[0]


def bilinear(img: np.ndarray, u: float, v: float) -> float:
    h, w = img.shape
    if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
        return float("nan")
    c0, r0 = int(np.floor(u)), int(np.floor(v))
    c1, r1 = min(c0 + 1, w - 1), min(r0 + 1, h - 1)
    a, b = u - c0, v - r0
    top = (1 - a) * img[r0, c0] + a * img[r0, c1]
    bottom = (1 - a) * img[r1, c0] + a * img[r1, c1]
    return float((1 - b) * top + b * bottom)


# file formats ----------------------------------------------------------------

def read_ply(path) -> np.ndarray:
    """ASCII PLY vertices as an ``(N, 3)`` array of x, y, z."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"point cloud not found: {path}")
    with path.open("r", encoding="ascii", errors="strict") as fh:
        lines = iter(enumerate(fh, start=1))
        _, magic = next(lines, (1, ""))
        if magic.strip() != "ply":
            raise MalformedRowError(path, 1, "missing 'ply' magic line")
        n_vertex = None
        props = []
        in_vertex = False
        for lineno, line in lines:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise MalformedRowError(path, lineno, f"unsupported PLY format {tok[1]!r}")
            if tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                props.append(tok[-1])
            elif tok[0] == "end_header":
                break
        if n_vertex is None or not {"x", "y", "z"} <= set(props):
            raise MalformedRowError(path, lineno, "header lacks a vertex element with x, y, z")
        ix, iy, iz = props.index("x"), props.index("y"), props.index("z")
        out = np.empty((n_vertex, 3))
        for k in range(n_vertex):
            lineno, line = next(lines, (None, None))
            if line is None:
                raise MalformedRowError(path, -1, f"expected {n_vertex} vertices, file ended after {k}")
            tok = line.split()
            if len(tok) < len(props):
                raise MalformedRowError(path, lineno, f"expected {len(props)} values, got {len(tok)}")
            try:
                out[k] = float(tok[ix]), float(tok[iy]), float(tok[iz])
            except ValueError as e:
                raise MalformedRowError(path, lineno, str(e)) from e
    return out


def write_ply(path, points) -> None:
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(pts)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\nend_header\n")
        for x, y, z in pts:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


_DEPTH_HEADER = struct.Struct("<II")


def write_depth_image(path, depth) -> None:
    """Binary depth image: ``<u32 width><u32 height>`` then float32 row-major."""
    d = np.asarray(depth, dtype="<f4")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(_DEPTH_HEADER.pack(w, h))
        fh.write(np.ascontiguousarray(d).tobytes())


def read_depth_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"depth image not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _DEPTH_HEADER.size:
        raise MalformedRowError(path, 0, "truncated header")
    w, h = _DEPTH_HEADER.unpack_from(raw)
    body = raw[_DEPTH_HEADER.size:]
    if len(body) != 4 * w * h:
        raise MalformedRowError(path, 0, f"expected {4 * w * h} payload bytes for {w}x{h}, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


class DepthImageFiles(MappingABC):
    """Frame index -> depth image, read from disk on access."""

    def __init__(self, paths: Mapping[int, Path]):
        self.paths = dict(paths)

    def __getitem__(self, frame: int) -> np.ndarray:
        return read_depth_image(self.paths[frame])

    def __iter__(self):
        return iter(self.paths)

    def __len__(self):
        return len(self.paths)
