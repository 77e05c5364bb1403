"""Forward keypoint tracking through an estimated pose chain.

A reference pixel is lifted to 3D with a depth provider, expressed in the
body frame, carried forward by the accumulated relative body motion, moved
back into the camera of each later frame and projected. The accumulation is
ordered so frame labels cancel: after frame ``k`` the running transform maps
``Body(t0)`` coordinates to ``Body(k)`` coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .annotations import AnnotationTrack
from .errors import AlignmentError, RespawnError
from .geometry import CameraModel, FrameId, ImagePoint, Pose, compose, inverse
from .trajectory import RELATIVE, PoseTrajectory

TRACK_FLOAT_DIGITS = 12


@dataclass(frozen=True, eq=False)
class RigConfig:
    """Camera -> Body extrinsic, optionally overridden per timestamp."""

    body_from_camera: Pose
    table: Optional[Mapping[int, Pose]] = None

    def at(self, t: int) -> Pose:
        if self.table is not None:
            if t not in self.table:
                raise AlignmentError(f"extrinsic table has no entry for timestamp {t}")
            pose = self.table[t]
        else:
            pose = self.body_from_camera
        return pose.relabel(FrameId.camera(t), FrameId.body(t))

    def covers(self, timestamps) -> bool:
        return self.table is None or all(int(t) in self.table for t in timestamps)


@dataclass
class Segment:
    start_frame: int
    ref_uv: ImagePoint
    ref_point: np.ndarray  # Body(start) coordinates
    points: list = field(default_factory=list)  # ImagePoint | None, from start_frame on
    lost: Optional[str] = None  # why the reference could not be lifted; points are all None

    @property
    def end_frame(self) -> int:
        """One past the last frame covered."""
        return self.start_frame + len(self.points)

    def frames(self):
        return range(self.start_frame, self.end_frame)


@dataclass
class KeypointTrack:
    track_id: int
    segments: list = field(default_factory=list)

    def predicted(self) -> dict:
        """Frame -> ImagePoint (or None when out of view)."""
        out = {}
        for seg in self.segments:
            for k, p in zip(seg.frames(), seg.points):
                out[k] = p
        return out

    @property
    def respawn_frames(self) -> list:
        return [s.start_frame for s in self.segments[1:]]

    @property
    def lost_frames(self) -> int:
        return sum(len(s.points) for s in self.segments if s.lost is not None)

    def to_dict(self) -> dict:
        def num(x):
            return float(f"{x:.{TRACK_FLOAT_DIGITS}g}")

        segments = []
        for s in self.segments:
            seg = {
                "start_frame": s.start_frame,
                "ref_uv": [num(s.ref_uv[0]), num(s.ref_uv[1])],
                "points": [
                    {"frame": k, "uv": None if p is None else [num(p[0]), num(p[1])]}
                    for k, p in zip(s.frames(), s.points)
                ],
            }
            if s.lost is not None:
                seg["lost"] = s.lost
            segments.append(seg)
        return {"track_id": self.track_id, "segments": segments}

    @classmethod
    def from_dict(cls, doc) -> "KeypointTrack":
        segments = []
        for s in doc["segments"]:
            pts = [None if p["uv"] is None else ImagePoint(*p["uv"]) for p in s["points"]]
            frames = [p["frame"] for p in s["points"]]
            if frames != list(range(s["start_frame"], s["start_frame"] + len(frames))):
                raise ValueError(f"track {doc['track_id']}: segment frames are not contiguous")
            segments.append(Segment(s["start_frame"], ImagePoint(*s["ref_uv"]), np.full(3, np.nan), pts, s.get("lost")))
        return cls(doc["track_id"], segments)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def write_track(track: KeypointTrack, path) -> None:
    Path(path).write_text(track.dumps(), encoding="utf-8")


def read_track(path) -> KeypointTrack:
    return KeypointTrack.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# chain -----------------------------------------------------------------------

def _relative(poses: PoseTrajectory) -> PoseTrajectory:
    return poses if poses.convention == RELATIVE else poses.to_relative()


def _chain(rel: PoseTrajectory, start: int, end: int):
    """Raw (R, d) of Body(start) -> Body(k) for k = start..end."""
    R = np.eye(3)
    d = np.zeros(3)
    Rs = np.empty((end - start + 1, 3, 3))
    ds = np.empty((end - start + 1, 3))
    Rs[0], ds[0] = R, d
    for i, k in enumerate(range(start + 1, end + 1), start=1):
        step = rel.poses[k]
        R, d = step.rotation @ R, step.rotation @ d + step.translation
        Rs[i], ds[i] = R, d
    return Rs, ds


def accumulate(poses: PoseTrajectory, start: int, end: int) -> Pose:
    """Body(start) -> Body(end) from the per-step relative poses."""
    rel = _relative(poses)
    Rs, ds = _chain(rel, start, end)
    return Pose(Rs[-1], ds[-1], FrameId.body(rel.timestamps[start]), FrameId.body(rel.timestamps[end]))


def camera_pose_at(
    initial_camera_pose: Pose, poses: PoseTrajectory, rig: RigConfig, frame: int
) -> Pose:
    """Camera(frame) -> Fixed, from the first-frame camera pose and the chain."""
    rel = _relative(poses)
    ts = rel.timestamps
    start = initial_camera_pose.relabel(FrameId.camera(ts[0]), None)
    body0_to_fixed = compose(start, inverse(rig.at(ts[0])))
    motion = inverse(accumulate(rel, 0, frame))
    return compose(compose(body0_to_fixed, motion), rig.at(ts[frame]))


def _project_chain(cam, rig, rel, start, end, p_body):
    """Pixels of a Body(start) point for frames start..end (inclusive)."""
    ts = rel.timestamps
    Rs, ds = _chain(rel, start, end)
    p_k = np.einsum("kij,j->ki", Rs, p_body) + ds
    if rig.table is None:
        cb = inverse(rig.body_from_camera)
        p_c = p_k @ cb.rotation.T + cb.translation
    else:
        p_c = np.empty_like(p_k)
        for i, k in enumerate(range(start, end + 1)):
            p_c[i] = inverse(rig.at(ts[k])).apply(p_k[i])
    z = p_c[:, 2]
    ok = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.hypot(p_c[:, 0] / z, p_c[:, 1] / z)
    ok &= r < cam.max_valid_radius
    out = [None] * len(p_c)
    if ok.any():
        uv = cam.project_points(p_c[ok])
        for i, (u, v) in zip(np.flatnonzero(ok), uv):
            out[i] = ImagePoint(float(u), float(v))
    return out


def lift(cam, depth, rig, rel, ref, start, initial_camera_pose=None) -> np.ndarray:
    """Body(start) coordinates of the scene point behind ``ref``."""
    pose0 = initial_camera_pose if initial_camera_pose is not None else getattr(depth, "initial_camera_pose", None)
    camera_pose = None
    if pose0 is not None and start > 0:
        camera_pose = camera_pose_at(pose0, rel, rig, start)
    p_cam = depth.point_at(cam, ref, start, camera_pose)
    return rig.at(rel.timestamps[start]).apply(p_cam)


def track_point(
    ref,
    start_index: int,
    poses: PoseTrajectory,
    rig: RigConfig,
    cam: CameraModel,
    depth,
    end_index: Optional[int] = None,
    initial_camera_pose: Optional[Pose] = None,
) -> list:
    """Predicted pixels of ``ref`` for frames ``start_index..end_index``.

    ``poses`` holds one pose per frame (see ``align_and_resample``). Frames
    where the point is behind the camera come back as ``None``.
    """
    rel = _relative(poses)
    n = len(rel)
    end = n - 1 if end_index is None else end_index
    if not 0 <= start_index <= end < n:
        raise AlignmentError(f"frame range {start_index}..{end} outside pose stream of {n} entries")
    if not rig.covers(rel.timestamps[start_index:end + 1]):
        raise AlignmentError("extrinsic table does not cover the tracked frames")
    p_body = lift(cam, depth, rig, rel, ref, start_index, initial_camera_pose)
    return _project_chain(cam, rig, rel, start_index, end, p_body)


# respawn -----------------------------------------------------------------------

class FixedPixel:
    """Always (re)spawn at the same configured pixel."""

    max_attempts = 1

    def __init__(self, uv, first_frame: int = 0):
        self.uv = ImagePoint(float(uv[0]), float(uv[1]))
        self.first_frame = first_frame

    def spawn(self, frame: int, cam: CameraModel) -> ImagePoint:
        return self.uv


class SeededRandom:
    """Uniform pixels in the central ``fraction`` of the image."""

    max_attempts = 100

    def __init__(self, seed: int, fraction: float = 0.6, first_frame: int = 0):
        self.rng = np.random.default_rng(seed)
        self.fraction = fraction
        self.first_frame = first_frame

    def spawn(self, frame: int, cam: CameraModel) -> ImagePoint:
        lo = 0.5 * (1.0 - self.fraction)
        hi = 1.0 - lo
        u = self.rng.uniform(lo * cam.width, hi * cam.width)
        v = self.rng.uniform(lo * cam.height, hi * cam.height)
        return ImagePoint(float(u), float(v))


class FromAnnotations:
    """Re-anchor on the human annotation of the respawn frame."""

    max_attempts = 1

    def __init__(self, track: AnnotationTrack):
        self.points = track.by_frame()
        if not self.points:
            raise RespawnError(0, f"annotation track {track.id} is empty")
        self.first_frame = min(self.points)

    def spawn(self, frame: int, cam: CameraModel) -> ImagePoint:
        p = self.points.get(frame)
        if p is None:
            raise RespawnError(frame, "no annotation at this frame")
        return ImagePoint(p.u, p.v)


class Callback:
    """Delegate the choice to a callable ``(frame, cam) -> (u, v)``, e.g. a UI."""

    max_attempts = 1

    def __init__(self, fn: Callable, first_frame: int = 0):
        self.fn = fn
        self.first_frame = first_frame

    def spawn(self, frame: int, cam: CameraModel) -> ImagePoint:
        u, v = self.fn(frame, cam)
        return ImagePoint(float(u), float(v))


def _exits(cam: CameraModel, p) -> bool:
    return p is None or not bool(cam.in_bounds(p[0], p[1]))


def _spawn(initializer, frame, cam, depth, rig, rel, initial_camera_pose):
    last = None
    for _ in range(initializer.max_attempts):
        ref = initializer.spawn(frame, cam)
        if _exits(cam, ref):
            last = f"initializer proposed out-of-bounds pixel ({ref[0]:.3f}, {ref[1]:.3f})"
            continue
        try:
            return ref, lift(cam, depth, rig, rel, ref, frame, initial_camera_pose)
        except (ArithmeticError, ValueError, LookupError) as e:
            last = str(e)
    raise RespawnError(frame, last or "initializer gave no point")


def run_track_with_respawn(
    initializer,
    n_frames: int,
    poses: PoseTrajectory,
    rig: RigConfig,
    cam: CameraModel,
    depth,
    annotations: Optional[AnnotationTrack] = None,
    track_id: int = 0,
    initial_camera_pose: Optional[Pose] = None,
) -> KeypointTrack:
    """Track one reference point over the sequence, respawning on exit.

    A segment closes at the first frame where the prediction leaves the image
    (or falls behind the camera) or where the annotation stream flags a
    respawn; a new segment starts at that frame from the initializer.

    With annotations, a respawn whose pixel cannot be lifted under the
    estimated camera pose (e.g. its ray misses the floor after drift) opens a
    ``lost`` segment with no predictions, closed by the next annotation
    respawn or exit. Without annotations the failure is a ``RespawnError``.
    """
    if n_frames < 1:
        raise AlignmentError("empty frame range")
    rel = _relative(poses)
    if len(rel) < n_frames:
        raise AlignmentError(f"{n_frames} frames but only {len(rel)} poses")
    if not rig.covers(rel.timestamps[:n_frames]):
        raise AlignmentError("extrinsic table does not cover every frame")
    ann = annotations.by_frame() if annotations is not None else {}
    track = KeypointTrack(track_id)
    start = getattr(initializer, "first_frame", 0)
    if start >= n_frames:
        return track
    while start < n_frames:
        try:
            ref, p_body = _spawn(initializer, start, cam, depth, rig, rel, initial_camera_pose)
        except RespawnError as e:
            a = ann.get(start)
            if a is None or start == getattr(initializer, "first_frame", 0):
                raise
            stop = next((k for k in range(start + 1, n_frames)
                         if k in ann and (ann[k].respawn or _exits(cam, ann[k].uv))), n_frames)
            track.segments.append(Segment(start, ImagePoint(a.u, a.v), np.full(3, np.nan),
                                          [None] * (stop - start), e.reason))
            start = stop
            continue
        predicted = _project_chain(cam, rig, rel, start, n_frames - 1, p_body)
        stop = n_frames
        for offset, p in enumerate(predicted[1:], start=1):
            k = start + offset
            a = ann.get(k)
            if _exits(cam, p) or (a is not None and (a.respawn or _exits(cam, a.uv))):
                stop = k
                break
        track.segments.append(Segment(start, ref, p_body, predicted[: stop - start]))
        start = stop
    return track


def track_all(
    annotation_tracks: Sequence[AnnotationTrack],
    n_frames: int,
    poses: PoseTrajectory,
    rig: RigConfig,
    cam: CameraModel,
    depth,
    initial_camera_pose: Optional[Pose] = None,
) -> dict:
    """One track per annotation track, re-anchored on the annotations."""
    rel = _relative(poses)
    return {
        t.id: run_track_with_respawn(
            FromAnnotations(t), n_frames, rel, rig, cam, depth, t, t.id, initial_camera_pose
        )
        for t in annotation_tracks
        if t.points
    }
