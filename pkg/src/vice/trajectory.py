"""Timestamped pose streams, frame sequences and their alignment.

Timestamps are integer nanoseconds. Two pose conventions are supported:

``absolute``
    entry ``k`` maps ``Body(t_k)`` into the Fixed frame.
``relative``
    entry ``k`` maps ``Body(t_{k-1})`` into ``Body(t_k)``; entry 0 maps the
    Fixed frame into ``Body(t_0)`` (identity when the Fixed frame is the
    starting body frame).

Composing every relative entry in order yields the inverse of the last
absolute pose, so the two conventions carry the same information.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import AlignmentError, ExtrapolationError
from .geometry import FIXED, FrameId, Pose, compose, inverse, quaternion_to_rotation, rotation_to_quaternion

ABSOLUTE = "absolute"
RELATIVE = "relative"
NS_PER_S = 1_000_000_000


def seconds_to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


def _labelled(pose: Pose, k: int, ts: np.ndarray, convention: str) -> Pose:
    if convention == ABSOLUTE:
        return pose.relabel(FrameId.body(ts[k]), FIXED)
    if k == 0:
        return pose.relabel(FIXED, FrameId.body(ts[0]))
    return pose.relabel(FrameId.body(ts[k - 1]), FrameId.body(ts[k]))


@dataclass(frozen=True, eq=False)
class PoseTrajectory:
    timestamps: np.ndarray
    poses: tuple
    convention: str = ABSOLUTE
    source: str = "unknown"

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        if self.convention not in (ABSOLUTE, RELATIVE):
            raise ValueError(f"unknown pose convention {self.convention!r}")
        if len(ts) != len(self.poses):
            raise ValueError(f"{len(ts)} timestamps for {len(self.poses)} poses")
        if len(ts) == 0:
            raise ValueError("empty trajectory")
        steps = np.diff(ts)
        if np.any(steps <= 0):
            k = int(np.flatnonzero(steps <= 0)[0]) + 1
            raise AlignmentError(f"timestamps must strictly increase (entry {k}: {ts[k - 1]} -> {ts[k]})")
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(
            self, "poses", tuple(_labelled(p, k, ts, self.convention) for k, p in enumerate(self.poses))
        )

    @classmethod
    def from_arrays(cls, timestamps, rotations, translations, convention=ABSOLUTE, source="unknown"):
        poses = [Pose(R, d) for R, d in zip(rotations, translations)]
        return cls(np.asarray(timestamps, dtype=np.int64), tuple(poses), convention, source)

    @classmethod
    def from_quaternions(cls, timestamps, positions, quats_wxyz, convention=ABSOLUTE, source="unknown"):
        rots = [quaternion_to_rotation(q) for q in quats_wxyz]
        return cls.from_arrays(timestamps, rots, positions, convention, source)

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, k) -> Pose:
        return self.poses[k]

    @property
    def rotations(self) -> np.ndarray:
        return np.stack([p.rotation for p in self.poses])

    @property
    def translations(self) -> np.ndarray:
        return np.stack([p.translation for p in self.poses])

    def quaternions(self) -> np.ndarray:
        return np.stack([rotation_to_quaternion(p.rotation) for p in self.poses])

    def with_source(self, source: str) -> "PoseTrajectory":
        return PoseTrajectory(self.timestamps, self.poses, self.convention, source)

    def shifted(self, offset_ns: int) -> "PoseTrajectory":
        return PoseTrajectory(self.timestamps + int(offset_ns), self.poses, self.convention, self.source)

    def to_absolute(self) -> "PoseTrajectory":
        if self.convention == ABSOLUTE:
            return self
        out = [inverse(self.poses[0])]
        for rel in self.poses[1:]:
            out.append(compose(out[-1], inverse(rel)))
        return PoseTrajectory(self.timestamps, tuple(out), ABSOLUTE, self.source)

    def to_relative(self) -> "PoseTrajectory":
        if self.convention == RELATIVE:
            return self
        absolute = self.poses
        out = [inverse(absolute[0])]
        for prev, cur in zip(absolute[:-1], absolute[1:]):
            out.append(compose(inverse(cur), prev))
        return PoseTrajectory(self.timestamps, tuple(out), RELATIVE, self.source)

    def rebased(self) -> "PoseTrajectory":
        """Absolute trajectory re-expressed in its own first body frame."""
        absolute = self.to_absolute()
        origin = inverse(absolute.poses[0]).relabel(FIXED, FIXED)
        poses = tuple(compose(origin, p) for p in absolute.poses)
        return PoseTrajectory(self.timestamps, poses, ABSOLUTE, self.source)

    def interpolate(self, query_ns) -> "PoseTrajectory":
        """Absolute poses at the query timestamps.

        Translation is interpolated linearly, rotation by quaternion slerp
        along the shorter arc. Queries beyond the covered interval by more
        than half the median sample spacing are refused; closer ones hold the
        end pose.
        """
        absolute = self.to_absolute()
        query = np.asarray(query_ns, dtype=np.int64).reshape(-1)
        ts = absolute.timestamps
        spacing = float(np.median(np.diff(ts))) if len(ts) > 1 else 0.0
        slack = 0.5 * spacing
        quats = absolute.quaternions()
        trans = absolute.translations
        poses = []
        for q_t in query:
            if q_t < ts[0] - slack or q_t > ts[-1] + slack:
                raise ExtrapolationError(
                    f"{self.source}: timestamp {q_t} outside pose coverage "
                    f"[{ts[0]}, {ts[-1]}] by more than {slack:.0f} ns"
                )
            i = int(np.searchsorted(ts, q_t, side="right")) - 1
            if i < 0:
                poses.append(absolute.poses[0])
                continue
            if ts[i] == q_t or i == len(ts) - 1:
                poses.append(absolute.poses[i])
                continue
            alpha = (q_t - ts[i]) / float(ts[i + 1] - ts[i])
            d = (1.0 - alpha) * trans[i] + alpha * trans[i + 1]
            q = slerp(quats[i], quats[i + 1], alpha)
            poses.append(Pose(quaternion_to_rotation(q), d))
        return PoseTrajectory(query, tuple(poses), ABSOLUTE, self.source)


def slerp(q0, q1, alpha: float) -> np.ndarray:
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        q = q0 + alpha * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = np.arccos(min(dot, 1.0))
    s = np.sin(theta)
    q = (np.sin((1.0 - alpha) * theta) * q0 + np.sin(alpha * theta) * q1) / s
    return q / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Timestamped camera frames. ``images`` holds file paths (or ``None``
    when frames exist only as metadata, e.g. a synthetic scene)."""

    timestamps: np.ndarray
    images: tuple = ()
    rate_hz: float = 0.0
    width: int = 0
    height: int = 0
    source_index: tuple = field(default=())

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        if len(ts) and np.any(np.diff(ts) <= 0):
            raise AlignmentError("frame timestamps must strictly increase")
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        images = tuple(self.images) if self.images else (None,) * len(ts)
        if len(images) != len(ts):
            raise ValueError(f"{len(images)} images for {len(ts)} timestamps")
        object.__setattr__(self, "images", images)
        if not self.source_index:
            object.__setattr__(self, "source_index", tuple(range(len(ts))))
        if not self.rate_hz and len(ts) > 1:
            object.__setattr__(self, "rate_hz", NS_PER_S / float(np.median(np.diff(ts))))

    def __len__(self):
        return len(self.timestamps)

    def image_path(self, k: int) -> Optional[Path]:
        p = self.images[k]
        return Path(p) if p is not None else None

    def subset(self, indices: Sequence[int], rate_hz: float = 0.0) -> "FrameSequence":
        idx = list(indices)
        return FrameSequence(
            self.timestamps[idx],
            tuple(self.images[i] for i in idx),
            rate_hz,
            self.width,
            self.height,
            tuple(self.source_index[i] for i in idx),
        )


def subsample_indices(timestamps, target_fps: Optional[float], clip_seconds: Optional[float]) -> list[int]:
    """Frames kept after downsampling to ``target_fps`` and clipping."""
    ts = np.asarray(timestamps, dtype=np.int64)
    if len(ts) == 0:
        return []
    native = float(np.median(np.diff(ts))) if len(ts) > 1 else 0.0
    tol = 0.5 * native
    period = NS_PER_S / target_fps if target_fps else 0.0
    keep = []
    for i, t in enumerate(ts):
        if clip_seconds and t - ts[0] >= clip_seconds * NS_PER_S - tol:
            break
        if period and t < ts[0] + len(keep) * period - tol:
            continue
        keep.append(i)
    return keep


@dataclass(frozen=True, eq=False)
class AlignedSequence:
    frames: FrameSequence
    poses: PoseTrajectory  # absolute, one entry per retained frame
    time_offset_ns: int = 0

    def __len__(self):
        return len(self.frames)

    def pairs(self):
        return list(zip(self.frames.timestamps.tolist(), self.poses.poses))


def align_and_resample(
    frames: FrameSequence,
    poses: PoseTrajectory,
    target_fps: Optional[float] = None,
    clip_seconds: Optional[float] = None,
    time_offset: float = 0.0,
) -> AlignedSequence:
    """Subsample frames, clip, and interpolate one pose per retained frame.

    The pose for a frame stamped ``t`` is read at ``t + time_offset`` on the
    pose clock. The returned trajectory is absolute and labelled with the
    frame timestamps; call ``to_relative()`` for tracking.
    """
    keep = subsample_indices(frames.timestamps, target_fps, clip_seconds)
    if not keep:
        raise AlignmentError("no frames left after resampling")
    kept = frames.subset(keep, rate_hz=target_fps or frames.rate_hz)
    offset_ns = seconds_to_ns(time_offset)
    interp = poses.interpolate(kept.timestamps + offset_ns)
    aligned = PoseTrajectory(kept.timestamps, interp.poses, ABSOLUTE, poses.source)
    return AlignedSequence(kept, aligned, offset_ns)
