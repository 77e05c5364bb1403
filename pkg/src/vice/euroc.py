"""EuRoC-style dataset directories and generic pose CSV files.

Layout (an optional ``mav0/`` level is accepted)::

    cam0/data.csv                      timestamp_ns,filename
    cam0/data/<filename>               PNG/JPEG frames
    cam0/sensor.yaml                   intrinsics, distortion, T_BS, resolution
    state_groundtruth_estimate0/data.csv   mocap poses
    <name>N/data.csv                   further pose streams (e.g. onboard0)
    pointcloud0/data.ply               optional scene scan
    depth0/data.csv, depth0/data/      optional per-frame depth images
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from PIL import Image

from .errors import MalformedRowError, MissingInputError, NonMonotonicError
from .geometry import CameraModel, Pose
from .tracking import RigConfig
from .trajectory import ABSOLUTE, FrameSequence, PoseTrajectory

GT_DIR = "state_groundtruth_estimate0"
NON_POSE_DIRS = re.compile(r"^(cam\d+|imu\d+|leica\d+|pointcloud\d+|depth\d+|body\.yaml)$")


@dataclass
class EurocSequence:
    root: Path
    frames: FrameSequence
    camera: CameraModel
    rig: RigConfig
    trajectories: list

    def __iter__(self):
        return iter((self.frames, self.camera, self.rig, self.trajectories))

    def trajectory(self, source: str) -> Optional[PoseTrajectory]:
        for t in self.trajectories:
            if t.source == source:
                return t
        return None

    @property
    def sources(self) -> list:
        return [t.source for t in self.trajectories]

    @property
    def pointcloud_path(self) -> Optional[Path]:
        for cand in (self.root / "pointcloud0" / "data.ply", self.root / "pointcloud.ply"):
            if cand.exists():
                return cand
        return None


def _resolve_root(root) -> Path:
    root = Path(root)
    if not root.exists():
        raise MissingInputError(f"dataset directory not found: {root}")
    if (root / "mav0").is_dir():
        return root / "mav0"
    return root


def _rows(path: Path):
    """Yield ``(line_number, fields)`` for non-comment, non-blank rows."""
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def _timestamp(path, lineno, text) -> int:
    try:
        return int(text)
    except ValueError:
        raise MalformedRowError(path, lineno, f"timestamp {text!r} is not an integer nanosecond count") from None


def read_pose_csv(path, convention: str = ABSOLUTE, source: Optional[str] = None,
                  header: bool = True) -> PoseTrajectory:
    """``timestamp_ns,px,py,pz,qw,qx,qy,qz[,...]``; extra columns are ignored.

    A first row that does not parse as numbers is taken as the header.
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"pose file not found: {path}")
    ts, pos, quat = [], [], []
    first = True
    for lineno, row in _rows(path):
        if first:
            first = False
            if header and not row[0].lstrip("-").isdigit():
                continue
        if len(row) < 8:
            raise MalformedRowError(path, lineno, f"expected at least 8 columns, got {len(row)}")
        t = _timestamp(path, lineno, row[0])
        try:
            vals = [float(x) for x in row[1:8]]
        except ValueError as e:
            raise MalformedRowError(path, lineno, f"non-numeric value: {e}") from None
        if not np.all(np.isfinite(vals)):
            raise MalformedRowError(path, lineno, "non-finite value")
        if ts and t <= ts[-1]:
            raise NonMonotonicError(path, lineno, ts[-1], t)
        ts.append(t)
        pos.append(vals[:3])
        quat.append(vals[3:7])
    if not ts:
        raise MalformedRowError(path, 0, "no pose rows")
    if source is None:
        source = source_label(path.parent.name)
    return PoseTrajectory.from_quaternions(ts, pos, quat, convention, source)


def write_pose_csv(path, traj: PoseTrajectory) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["#timestamp [ns]", "p_x [m]", "p_y [m]", "p_z [m]", "q_w []", "q_x []", "q_y []", "q_z []"])
        for t, p in zip(traj.timestamps.tolist(), traj.poses):
            q = p.quaternion()
            w.writerow([t] + [f"{x:.17g}" for x in p.translation] + [f"{x:.17g}" for x in q])


def source_label(dirname: str) -> str:
    if dirname == GT_DIR:
        return "mocap"
    return re.sub(r"\d+$", "", dirname) or dirname


def read_sensor_yaml(path):
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"camera calibration not found: {path}")
    text = "\n".join(l for l in path.read_text(encoding="utf-8").splitlines() if not l.startswith("%YAML"))
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise MalformedRowError(path, getattr(getattr(e, "problem_mark", None), "line", 0) + 1, str(e)) from None
    try:
        fx, fy, cx, cy = (float(x) for x in doc["intrinsics"])
        width, height = (int(x) for x in doc["resolution"])
        dist = [float(x) for x in doc.get("distortion_coefficients", [])]
        tbs = doc["T_BS"]
        data = tbs["data"] if isinstance(tbs, dict) else tbs
        T = np.asarray(data, dtype=np.float64).reshape(4, 4)
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedRowError(path, 0, f"bad calibration field: {e!r}") from None
    cam = CameraModel.from_opencv(fx, fy, cx, cy, width, height, dist)
    rate = float(doc.get("rate_hz", 0.0) or 0.0)
    return cam, RigConfig(Pose.from_matrix(T)), rate


def write_sensor_yaml(path, cam: CameraModel, rig: RigConfig, rate_hz: float) -> None:
    T = rig.body_from_camera.matrix
    doc = {
        "sensor_type": "camera",
        "comment": "VICE synthetic camera",
        "T_BS": {"cols": 4, "rows": 4, "data": [float(f"{x:.17g}") for x in T.ravel()]},
        "rate_hz": float(rate_hz),
        "resolution": [cam.width, cam.height],
        "camera_model": "pinhole",
        "intrinsics": [cam.fx, cam.fy, cam.cx, cam.cy],
        "distortion_model": "rational" if any(cam.radial[2:]) else "radial-tangential",
        "distortion_coefficients": [float(x) for x in cam.opencv_distortion],
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=True), encoding="utf-8")


def read_frame_index(cam_dir: Path, cam: CameraModel, check_images: bool = True) -> FrameSequence:
    index = cam_dir / "data.csv"
    if not index.exists():
        raise MissingInputError(f"frame index not found: {index}")
    ts, images = [], []
    for lineno, row in _rows(index):
        if len(row) < 2:
            raise MalformedRowError(index, lineno, f"expected 2 columns, got {len(row)}")
        t = _timestamp(index, lineno, row[0])
        if ts and t <= ts[-1]:
            raise NonMonotonicError(index, lineno, ts[-1], t)
        img = cam_dir / "data" / row[1]
        if check_images:
            if not img.exists():
                raise MissingInputError(f"{index}:{lineno}: image not found: {img}")
            with Image.open(img) as im:
                if im.size != (cam.width, cam.height):
                    raise MalformedRowError(
                        index, lineno, f"image {img.name} is {im.size[0]}x{im.size[1]}, "
                        f"calibration says {cam.width}x{cam.height}"
                    )
        ts.append(t)
        images.append(str(img) if img.exists() else None)
    if not ts:
        raise MalformedRowError(index, 0, "no frames listed")
    return FrameSequence(np.array(ts, dtype=np.int64), tuple(images), 0.0, cam.width, cam.height)


def read_depth_index(root) -> dict:
    """Timestamp -> depth image path from ``depth0/data.csv``."""
    d = _resolve_root(root) / "depth0"
    index = d / "data.csv"
    if not index.exists():
        raise MissingInputError(f"depth image index not found: {index}")
    out = {}
    for lineno, row in _rows(index):
        if len(row) < 2:
            raise MalformedRowError(index, lineno, f"expected 2 columns, got {len(row)}")
        out[_timestamp(index, lineno, row[0])] = d / "data" / row[1]
    return out


def load_euroc_sequence(root, check_images: bool = True) -> EurocSequence:
    """Load frames, calibration, extrinsic and every pose stream under ``root``.

    ``check_images=False`` accepts an index whose image files are absent
    (metadata-only synthetic datasets).
    """
    root = _resolve_root(root)
    cam_dir = root / "cam0"
    cam, rig, rate = read_sensor_yaml(cam_dir / "sensor.yaml")
    frames = read_frame_index(cam_dir, cam, check_images)
    if rate:
        frames = FrameSequence(frames.timestamps, frames.images, rate, cam.width, cam.height)
    trajectories = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if NON_POSE_DIRS.match(sub.name) or not (sub / "data.csv").exists():
            continue
        trajectories.append(read_pose_csv(sub / "data.csv", ABSOLUTE, source_label(sub.name)))
    if not trajectories:
        raise MissingInputError(f"no pose stream (e.g. {GT_DIR}/data.csv) under {root}")
    return EurocSequence(root, frames, cam, rig, trajectories)
