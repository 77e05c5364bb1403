"""Dataset-level steps shared by the command line and scripted runs.

Frame indices everywhere (annotations, tracks, overlays) refer to the
retained frame sequence after optional resampling and clipping; without
``fps``/``clip_seconds`` that is the dataset's own frame list.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .annotations import AnnotationSet, read_annotations
from .depth import (
    DEPTH_MAP,
    FLOOR,
    SENSOR,
    DepthImageFiles,
    FloorPlaneConfig,
    FloorPlaneDepth,
    PointCloudDepth,
    SensorDepth,
    read_ply,
)
from .errors import AlignmentError, ConfigError, MissingInputError
from .euroc import EurocSequence, load_euroc_sequence, read_depth_index, read_pose_csv
from .geometry import Pose, compose
from .metrics import delta_report, vice_report
from .tracking import (
    FixedPixel,
    SeededRandom,
    read_track,
    run_track_with_respawn,
    track_all,
    write_track,
)
from .trajectory import ABSOLUTE, RELATIVE, AlignedSequence, align_and_resample

DEPTH_MODES = (FLOOR, DEPTH_MAP, SENSOR)
INIT_POLICIES = ("annotations", "fixed", "random")
RUN_MANIFEST = "run.json"


@dataclass
class TrackConfig:
    dataset: str
    annotations: Optional[str] = None  # defaults to <dataset>/annotations.json
    sources: tuple = ()  # empty: every pose stream
    depth: str = FLOOR
    init: str = "annotations"
    pixel: Optional[tuple] = None
    points: int = 4
    seed: int = 0
    fps: Optional[float] = None
    clip_seconds: Optional[float] = None
    time_offset: float = 0.0
    altitude: Optional[float] = None
    reference_source: str = "mocap"
    pose_files: tuple = ()  # extra (name, csv path) pose streams
    pose_convention: str = ABSOLUTE

    def __post_init__(self):
        if self.depth not in DEPTH_MODES:
            raise ConfigError(f"depth mode must be one of {', '.join(DEPTH_MODES)}, got {self.depth!r}")
        if self.init not in INIT_POLICIES:
            raise ConfigError(f"init policy must be one of {', '.join(INIT_POLICIES)}, got {self.init!r}")
        if self.init == "fixed" and self.pixel is None:
            raise ConfigError("init policy 'fixed' needs a pixel")
        if self.pose_convention not in (ABSOLUTE, RELATIVE):
            raise ConfigError(f"pose convention must be {ABSOLUTE!r} or {RELATIVE!r}, got {self.pose_convention!r}")
        self.sources = tuple(self.sources)
        self.pose_files = tuple(tuple(x) for x in self.pose_files)

    def annotation_path(self) -> Path:
        return Path(self.annotations) if self.annotations else Path(self.dataset) / "annotations.json"


@dataclass
class Inputs:
    sequence: EurocSequence
    frames: object  # retained FrameSequence
    aligned: dict  # source -> AlignedSequence
    annotations: Optional[AnnotationSet]
    initial_camera_pose: Pose
    reference_source: str
    extra: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.frames)


def align_source(seq: EurocSequence, source: str, fps=None, clip_seconds=None, time_offset=0.0) -> AlignedSequence:
    traj = seq.trajectory(source)
    if traj is None:
        raise MissingInputError(f"no pose stream named {source!r}; available: {', '.join(seq.sources)}")
    return align_and_resample(seq.frames, traj, fps, clip_seconds, time_offset)


def initial_camera_pose(reference: AlignedSequence, seq: EurocSequence) -> Pose:
    """Camera -> Fixed at the first retained frame, from the reference stream."""
    body0 = reference.poses.poses[0].relabel()
    return compose(body0, seq.rig.at(int(reference.frames.timestamps[0])).relabel())


def load_inputs(cfg: TrackConfig, need_annotations: Optional[bool] = None, check_images: bool = False) -> Inputs:
    seq = load_euroc_sequence(cfg.dataset, check_images=check_images)
    for name, path in cfg.pose_files:
        if seq.trajectory(name) is not None:
            raise ConfigError(f"pose stream {name!r} already exists in the dataset")
        seq.trajectories.append(read_pose_csv(path, cfg.pose_convention, name))
    sources = cfg.sources or tuple(seq.sources)
    ref_name = cfg.reference_source if seq.trajectory(cfg.reference_source) is not None else sources[0]
    # the reference is assumed synchronised with the camera
    reference = align_source(seq, ref_name, cfg.fps, cfg.clip_seconds, 0.0)
    aligned = {s: align_source(seq, s, cfg.fps, cfg.clip_seconds, cfg.time_offset) for s in sources}
    frames = reference.frames
    if need_annotations is None:
        need_annotations = cfg.init == "annotations"
    ann = None
    path = cfg.annotation_path()
    if path.exists() or need_annotations:
        ann = read_annotations(path, (frames.width, frames.height))
    pose0 = initial_camera_pose(reference, seq)
    return Inputs(seq, frames, aligned, ann, pose0, ref_name)


def make_depth(cfg: TrackConfig, inputs: Inputs):
    if cfg.depth == FLOOR:
        return FloorPlaneDepth(FloorPlaneConfig(inputs.initial_camera_pose, cfg.altitude))
    if cfg.depth == DEPTH_MAP:
        path = inputs.sequence.pointcloud_path
        if path is None:
            raise MissingInputError(f"depth mode 'zmap' needs pointcloud0/data.ply under {inputs.sequence.root}")
        return PointCloudDepth(read_ply(path), inputs.initial_camera_pose)
    by_ts = read_depth_index(inputs.sequence.root)
    paths = {k: by_ts[int(t)] for k, t in enumerate(inputs.frames.timestamps.tolist()) if int(t) in by_ts}
    return SensorDepth(DepthImageFiles(paths))


def _initializer(cfg: TrackConfig, track_index: int):
    if cfg.init == "fixed":
        return FixedPixel(cfg.pixel)
    # independent, reproducible stream per reference point
    seed = np.random.SeedSequence([cfg.seed, track_index])
    return SeededRandom(int(seed.generate_state(1)[0]))


def track_source(cfg: TrackConfig, inputs: Inputs, source: str, depth) -> dict:
    poses = inputs.aligned[source].poses.to_relative()
    rig = inputs.sequence.rig
    cam = inputs.sequence.camera
    n = inputs.n_frames
    if cfg.init == "annotations":
        return track_all(inputs.annotations.tracks, n, poses, rig, cam, depth, inputs.initial_camera_pose)
    return {
        i: run_track_with_respawn(_initializer(cfg, i), n, poses, rig, cam, depth, None, i, inputs.initial_camera_pose)
        for i in range(cfg.points)
    }


def run_tracking(cfg: TrackConfig, inputs: Optional[Inputs] = None) -> dict:
    """Source -> {track id: KeypointTrack}."""
    inputs = inputs or load_inputs(cfg)
    depth = make_depth(cfg, inputs)
    return {s: track_source(cfg, inputs, s, depth) for s in inputs.aligned}


def manifest(cfg: TrackConfig, inputs: Inputs) -> dict:
    seq_name = inputs.annotations.sequence if inputs.annotations and inputs.annotations.sequence else None
    return {
        "dataset": str(cfg.dataset),
        "sequence": seq_name or Path(cfg.dataset).resolve().name,
        "depth_mode": cfg.depth,
        "sources": list(inputs.aligned),
        "reference_source": inputs.reference_source,
        "seed": cfg.seed,
        "config": json.loads(json.dumps(asdict(cfg))),
        "n_frames": inputs.n_frames,
    }


def write_tracks(out_dir, tracks_by_source: dict, run: dict) -> list:
    out = Path(out_dir)
    written = []
    for source, tracks in tracks_by_source.items():
        (out / source).mkdir(parents=True, exist_ok=True)
        for tid in sorted(tracks):
            path = out / source / f"track_{tid}.json"
            write_track(tracks[tid], path)
            written.append(path)
    (out / RUN_MANIFEST).write_text(json.dumps(run, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return written


def read_tracks(track_dir) -> tuple[dict, dict]:
    """``(manifest, {source: {track_id: KeypointTrack}})`` from a ``track`` run."""
    d = Path(track_dir)
    if not (d / RUN_MANIFEST).exists():
        raise MissingInputError(f"no {RUN_MANIFEST} in {d}; run 'vice track' first")
    run = json.loads((d / RUN_MANIFEST).read_text(encoding="utf-8"))
    out = {}
    for source in run["sources"]:
        tracks = {}
        for path in sorted((d / source).glob("track_*.json")):
            t = read_track(path)
            tracks[t.track_id] = t
        out[source] = tracks
    return run, out


def check_frame_ranges(annotations: AnnotationSet, tracks_by_source: dict, n_frames: int) -> None:
    """Every annotated frame must be a frame the tracks could cover."""
    ann_frames = [p.frame for t in annotations.tracks for p in t.points]
    if not ann_frames:
        return
    lo, hi = min(ann_frames), max(ann_frames)
    for source, tracks in tracks_by_source.items():
        frames = [k for t in tracks.values() for k in t.predicted()]
        t_lo, t_hi = (min(frames), max(frames)) if frames else (0, n_frames - 1)
        if hi >= n_frames or lo < t_lo or hi > t_hi:
            raise AlignmentError(
                f"annotation frames {lo}..{hi} do not fit {source} track frames {t_lo}..{t_hi} "
                f"(sequence has {n_frames} frames)"
            )


def evaluate(cfg: TrackConfig, tracks_by_source: dict, inputs: Optional[Inputs] = None, roe_stride: int = 10,
             gt_source: str = "mocap", onboard_source: str = "onboard") -> dict:
    inputs = inputs or load_inputs(cfg, need_annotations=True)
    if inputs.annotations is None:
        raise MissingInputError(f"annotation file not found: {cfg.annotation_path()}")
    check_frame_ranges(inputs.annotations, tracks_by_source, inputs.n_frames)
    poses = {}
    for s in (gt_source, onboard_source):
        if inputs.sequence.trajectory(s) is not None:
            offset = 0.0 if s == inputs.reference_source else cfg.time_offset
            poses[s] = align_source(inputs.sequence, s, cfg.fps, cfg.clip_seconds, offset).poses
    return delta_report(inputs.annotations, tracks_by_source, poses, gt_source, onboard_source, roe_stride)


def sweep_offsets(cfg: TrackConfig, source: str, offsets) -> list:
    """``(offset_s, rmse2d)`` per candidate offset for one pose stream; the
    error is ``None`` where the shifted frames fall outside the pose stream."""
    base = load_inputs(TrackConfig(**{**asdict(cfg), "sources": (), "time_offset": 0.0}), need_annotations=True)
    depth = make_depth(cfg, base)
    out = []
    for off in offsets:
        run_cfg = TrackConfig(**{**asdict(cfg), "sources": (source,), "time_offset": float(off)})
        try:
            aligned = align_source(base.sequence, source, cfg.fps, cfg.clip_seconds, float(off))
        except AlignmentError:
            out.append((float(off), None))
            continue
        inputs = Inputs(base.sequence, base.frames, {source: aligned}, base.annotations,
                        base.initial_camera_pose, base.reference_source)
        tracks = track_source(run_cfg, inputs, source, depth)
        out.append((float(off), vice_report(base.annotations, tracks).rmse2d))
    return out


def parse_range(text: str) -> list:
    """``a:b:step`` -> inclusive list of values."""
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"range must look like start:stop:step, got {text!r}") from None
    if step <= 0 or b < a:
        raise ConfigError(f"range {text!r} needs step > 0 and stop >= start")
    n = int(np.floor((b - a) / step + 1e-9)) + 1
    return [round(a + i * step, 12) for i in range(n)]
