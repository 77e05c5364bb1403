"""Frames, rigid transforms, rotation log/exp and the distorted pinhole camera.

Conventions
-----------
A :class:`Pose` maps coordinates expressed in ``from_frame`` to coordinates
expressed in ``to_frame``::

    p_to = R @ p_from + d

so the transform usually written ``T^{A,B}`` is ``Pose(R, d, from_frame=B,
to_frame=A)``. Camera frames follow the optical convention (x right, y down,
z along the optical axis). Pixel ``(u, v)`` addresses the centre of pixel
column ``u``, row ``v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import kernels
from .errors import (
    BehindCameraError,
    FrameMismatchError,
    InvalidRotationError,
    NonConvergenceError,
)

POSE_TOL = 1e-9
LOG_TOL = 1e-6
UNDISTORT_MAX_ITER = 50
UNDISTORT_TOL = 1e-12

_SMALL_ANGLE = 1e-6
_NEAR_PI = np.pi - 1e-3


@dataclass(frozen=True)
class FrameId:
    """Symbolic frame label. ``t`` is a frame index or timestamp for the
    time-indexed frames (Body, Camera) and ``None`` for Fixed/Image."""

    kind: str
    t: Optional[int] = None

    KINDS = ("Body", "Fixed", "Camera", "Image")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown frame kind {self.kind!r}")
        timed = self.kind in ("Body", "Camera")
        if timed and self.t is None:
            raise ValueError(f"{self.kind} frame needs a time index")
        if not timed and self.t is not None:
            raise ValueError(f"{self.kind} frame carries no time index")

    @classmethod
    def body(cls, t: int) -> "FrameId":
        return cls("Body", int(t))

    @classmethod
    def camera(cls, t: int) -> "FrameId":
        return cls("Camera", int(t))

    def __str__(self):
        return self.kind if self.t is None else f"{self.kind}({self.t})"


FIXED = FrameId("Fixed")
IMAGE = FrameId("Image")


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def check_rotation(R, tol=POSE_TOL):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidRotationError(f"rotation must be a finite 3x3 matrix, got shape {R.shape}")
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > tol:
        raise InvalidRotationError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise InvalidRotationError(f"rotation has det {det:.12f}, expected +1")
    return R


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform between two frames. ``None`` frames are unlabeled and
    compose with anything."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    from_frame: Optional[FrameId] = None
    to_frame: Optional[FrameId] = None

    def __post_init__(self):
        R = check_rotation(self.rotation)
        d = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if d.shape != (3,) or not np.all(np.isfinite(d)):
            raise ValueError(f"translation must be a finite 3-vector, got {self.translation!r}")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(d))

    @classmethod
    def _trusted(cls, R, d, from_frame, to_frame) -> "Pose":
        # skips validation; for results built from already valid poses
        pose = object.__new__(cls)
        object.__setattr__(pose, "rotation", _readonly(R))
        object.__setattr__(pose, "translation", _readonly(d))
        object.__setattr__(pose, "from_frame", from_frame)
        object.__setattr__(pose, "to_frame", to_frame)
        return pose

    @classmethod
    def identity(cls, from_frame=None, to_frame=None) -> "Pose":
        return cls(np.eye(3), np.zeros(3), from_frame, to_frame)

    @classmethod
    def from_matrix(cls, T, from_frame=None, to_frame=None) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (4, 4):
            raise ValueError(f"expected a 4x4 homogeneous matrix, got {T.shape}")
        if not np.allclose(T[3], [0, 0, 0, 1], atol=1e-12):
            raise ValueError("last row of a homogeneous transform must be [0, 0, 0, 1]")
        return cls(T[:3, :3], T[:3, 3], from_frame, to_frame)

    @classmethod
    def from_quaternion(cls, q_wxyz, translation, from_frame=None, to_frame=None) -> "Pose":
        return cls(quaternion_to_rotation(q_wxyz), translation, from_frame, to_frame)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def quaternion(self) -> np.ndarray:
        return rotation_to_quaternion(self.rotation)

    def apply(self, points) -> np.ndarray:
        """Transform one point ``(3,)`` or a batch ``(N, 3)``."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def relabel(self, from_frame=None, to_frame=None) -> "Pose":
        return Pose._trusted(self.rotation, self.translation, from_frame, to_frame)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def allclose(self, other: "Pose", atol=1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __repr__(self):
        rv = rotation_log(self.rotation)
        return (
            f"Pose({self.from_frame} -> {self.to_frame}, "
            f"rotvec={np.round(rv, 6).tolist()}, d={np.round(self.translation, 6).tolist()})"
        )


def compose(a: Pose, b: Pose) -> Pose:
    """Return ``a ∘ b``: apply ``b`` first, then ``a``."""
    if a.from_frame is not None and b.to_frame is not None and a.from_frame != b.to_frame:
        raise FrameMismatchError(a.from_frame, b.to_frame)
    return Pose._trusted(
        a.rotation @ b.rotation,
        a.rotation @ b.translation + a.translation,
        b.from_frame,
        a.to_frame,
    )


def inverse(a: Pose) -> Pose:
    Rt = a.rotation.T
    return Pose._trusted(Rt, -Rt @ a.translation, a.to_frame, a.from_frame)


# rotations ---------------------------------------------------------------

def hat(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_exp(v) -> np.ndarray:
    """Rodrigues' formula; axis-angle vector to rotation matrix."""
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    K = hat(v)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    s = np.sin(theta) / theta
    c = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + s * K + c * (K @ K)


def rotation_log(R) -> np.ndarray:
    """Axis-angle vector of a rotation, with angle in ``[0, pi]``."""
    R = np.asarray(R, dtype=np.float64)
    check_rotation(R, tol=LOG_TOL)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = float(np.arctan2(s, c))
    if theta < _SMALL_ANGLE:
        return w
    if theta < _NEAR_PI:
        return (theta / s) * w
    # near pi the antisymmetric part vanishes; read the axis off the symmetric part
    B = 0.5 * (R + R.T) - c * np.eye(3)
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / np.sqrt(B[i, i])
    axis /= np.linalg.norm(axis)
    if np.dot(axis, w) < 0:
        axis = -axis
    return theta * axis


def rotation_angle(R) -> float:
    return float(np.linalg.norm(rotation_log(R)))


def rot_x(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def quaternion_to_rotation(q_wxyz) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix. Input is normalized."""
    q = np.asarray(q_wxyz, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise InvalidRotationError(f"degenerate quaternion {q_wxyz!r}")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z) with ``w >= 0``."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


# camera ------------------------------------------------------------------

class ImagePoint(NamedTuple):
    u: float
    v: float


class ScenePoint(NamedTuple):
    x: float
    y: float
    z: float
    frame: Optional[FrameId] = None

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics with the rational Brown-Conrady distortion.

    ``radial`` is ``(k1, ..., k6)`` where ``k4..k6`` form the denominator of
    the radial factor; ``tangential`` is ``(p1, p2)``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    radial: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    tangential: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        radial = tuple(float(k) for k in self.radial)
        radial = radial + (0.0,) * (6 - len(radial))
        if len(radial) != 6 or len(self.tangential) != 2:
            raise ValueError("expected 6 radial and 2 tangential coefficients")
        object.__setattr__(self, "radial", radial)
        object.__setattr__(self, "tangential", tuple(float(p) for p in self.tangential))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def from_opencv(cls, fx, fy, cx, cy, width, height, dist: Sequence[float] = ()) -> "CameraModel":
        """Build from OpenCV-ordered coefficients ``k1 k2 p1 p2 [k3 [k4 k5 k6]]``."""
        d = list(dist) + [0.0] * (8 - len(dist))
        if len(d) != 8:
            raise ValueError(f"expected at most 8 distortion coefficients, got {len(dist)}")
        k1, k2, p1, p2, k3, k4, k5, k6 = d
        return cls(fx, fy, cx, cy, width, height, (k1, k2, k3, k4, k5, k6), (p1, p2))

    @property
    def opencv_distortion(self) -> np.ndarray:
        k1, k2, k3, k4, k5, k6 = self.radial
        p1, p2 = self.tangential
        return np.array([k1, k2, p1, p2, k3, k4, k5, k6])

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def coeffs(self) -> np.ndarray:
        return np.array(self.radial + self.tangential, dtype=np.float64)

    @property
    def has_distortion(self) -> bool:
        return any(self.radial) or any(self.tangential)

    @cached_property
    def max_valid_radius(self) -> float:
        """Normalized radius beyond which the radial model stops being
        monotonic (points past it can fold back into the image)."""
        if not any(self.radial):
            return float("inf")
        r = np.linspace(0.0, 20.0, 200001)[1:]
        r2 = r * r
        k1, k2, k3, k4, k5, k6 = self.radial
        radial = (1 + r2 * (k1 + r2 * (k2 + r2 * k3))) / (1 + r2 * (k4 + r2 * (k5 + r2 * k6)))
        rd = r * radial
        bad = np.flatnonzero((np.diff(rd) <= 0) | ~np.isfinite(rd[1:]) | (radial[1:] <= 0))
        return float(r[bad[0]]) if bad.size else float("inf")

    def in_bounds(self, u, v):
        """Half-open bounds test ``[0, width) x [0, height)``; vectorized."""
        u = np.asarray(u)
        v = np.asarray(v)
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)

    def distort(self, x, y):
        if not self.has_distortion:
            return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        return kernels.distort_points(x, y, self.coeffs)

    def undistort(self, xd, yd):
        xd = np.asarray(xd, dtype=np.float64)
        yd = np.asarray(yd, dtype=np.float64)
        if not self.has_distortion:
            return xd, yd
        x, y, res = kernels.undistort_points(xd, yd, self.coeffs, UNDISTORT_MAX_ITER, UNDISTORT_TOL)
        worst = float(np.max(res)) if res.size else 0.0
        if not worst <= UNDISTORT_TOL:
            raise NonConvergenceError(worst, UNDISTORT_MAX_ITER)
        return x.reshape(xd.shape), y.reshape(yd.shape)

    def project_points(self, points) -> np.ndarray:
        """Camera-frame points ``(N, 3)`` to pixels ``(N, 2)``. All z must be > 0."""
        P = np.atleast_2d(np.asarray(points, dtype=np.float64))
        z = P[:, 2]
        if np.any(~(z > 0)):
            bad = int(np.flatnonzero(~(z > 0))[0])
            raise BehindCameraError(f"point {P[bad].tolist()} has z={z[bad]} <= 0")
        xd, yd = self.distort(P[:, 0] / z, P[:, 1] / z)
        return np.column_stack([self.fx * xd + self.cx, self.fy * yd + self.cy])

    def unproject_points(self, pixels, depth) -> np.ndarray:
        """Pixels ``(N, 2)`` with per-point (or scalar) depth to camera-frame points."""
        uv = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), (uv.shape[0],))
        if np.any(~(depth > 0)):
            raise ValueError(f"depth must be positive, got min {depth.min()}")
        x, y = self.undistort((uv[:, 0] - self.cx) / self.fx, (uv[:, 1] - self.cy) / self.fy)
        return np.column_stack([x * depth, y * depth, depth])


def project(cam: CameraModel, p) -> ImagePoint:
    """Project one camera-frame point to the image."""
    xyz = p.xyz if isinstance(p, ScenePoint) else np.asarray(p, dtype=np.float64)
    u, v = cam.project_points(xyz[None, :])[0]
    return ImagePoint(float(u), float(v))


def unproject(cam: CameraModel, p, depth: float) -> ScenePoint:
    """Lift a pixel to the camera-frame point at the given z (not range)."""
    u, v = p
    x, y, z = cam.unproject_points([[u, v]], depth)[0]
    return ScenePoint(float(x), float(y), float(z))
