"""Pixel and pose-space error metrics, subset aggregation and time series."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .annotations import AnnotationSet, AnnotationTrack
from .errors import AlignmentError, DegenerateSamplingError, InvalidSubsetError, NoOverlapError
from .geometry import rotation_log
from .trajectory import PoseTrajectory

NA = "N.A"
DEFAULT_ROE_STRIDE = 10


def _as_series(s) -> dict:
    if isinstance(s, AnnotationTrack):
        return {p.frame: (p.u, p.v) for p in s.points}
    if isinstance(s, Mapping):
        return dict(s)
    return dict(enumerate(s))


def paired_errors(predicted, annotated) -> tuple[list, np.ndarray]:
    """Frames present in both series and the pixel distance at each."""
    a = _as_series(predicted)
    b = _as_series(annotated)
    frames = sorted(k for k in a.keys() & b.keys() if a[k] is not None and b[k] is not None)
    if not frames:
        return [], np.empty(0)
    pa = np.array([a[k] for k in frames], dtype=np.float64)
    pb = np.array([b[k] for k in frames], dtype=np.float64)
    return frames, np.linalg.norm(pa - pb, axis=1)


def rmse2d(predicted, annotated) -> float:
    """Root-mean-square pixel distance over frames present in both series.

    Series are mappings frame -> (u, v) (``None`` for absent), plain
    sequences indexed by frame, or annotation tracks.
    """
    frames, err = paired_errors(predicted, annotated)
    if not frames:
        raise NoOverlapError("the two pixel series share no frame")
    return float(np.sqrt(np.mean(err * err)))


def _check_aligned(gt: PoseTrajectory, est: PoseTrajectory):
    if len(gt) != len(est):
        raise AlignmentError(f"trajectory lengths differ: {len(gt)} vs {len(est)}")


def rmse3d(gt: PoseTrajectory, est: PoseTrajectory) -> float:
    _check_aligned(gt, est)
    diff = gt.translations - est.translations
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def _rotations(x) -> np.ndarray:
    if isinstance(x, PoseTrajectory):
        return x.rotations
    return np.asarray(x, dtype=np.float64)


def orientation_errors(gt_rotations, est_rotations) -> np.ndarray:
    """Per-entry geodesic angle between matching rotations."""
    G = _rotations(gt_rotations)
    E = _rotations(est_rotations)
    if len(G) != len(E):
        raise AlignmentError(f"rotation series lengths differ: {len(G)} vs {len(E)}")
    return np.array([np.linalg.norm(rotation_log(g.T @ e)) for g, e in zip(G, E)])


def aoe(gt_rotations, est_rotations) -> float:
    err = orientation_errors(gt_rotations, est_rotations)
    if err.size == 0:
        raise AlignmentError("empty rotation series")
    return float(np.sqrt(np.mean(err * err)))


def roe_samples(n: int, stride: int) -> list:
    if stride < 1:
        raise DegenerateSamplingError(f"stride must be >= 1, got {stride}")
    if stride >= n:
        raise DegenerateSamplingError(f"stride {stride} leaves no sample in a trajectory of {n} entries")
    return list(range(0, n - 1, stride))


def roe(gt, est, stride: int = DEFAULT_ROE_STRIDE) -> float:
    """Mean geodesic error of one-step rotation increments sampled every
    ``stride`` entries."""
    G = _rotations(gt)
    E = _rotations(est)
    if len(G) != len(E):
        raise AlignmentError(f"trajectory lengths differ: {len(G)} vs {len(E)}")
    errs = []
    for t in roe_samples(len(G), stride):
        dg = G[t].T @ G[t + 1]
        de = E[t].T @ E[t + 1]
        errs.append(np.linalg.norm(rotation_log(dg.T @ de)))
    return float(np.mean(errs))


def subset_aggregate(values: Sequence[float], k: int) -> tuple[float, float]:
    """Mean and population std, over every size-``k`` subset, of the subset
    average."""
    vals = [float(v) for v in values]
    if not 1 <= k <= len(vals):
        raise InvalidSubsetError(f"subset size {k} not in 1..{len(vals)}")
    means = np.array([np.mean(c) for c in itertools.combinations(vals, k)])
    return float(means.mean()), float(means.std())


# reports ---------------------------------------------------------------------

@dataclass
class MetricReport:
    """Metrics for one (reference, source) pair. ``None`` marks N.A."""

    rmse2d: Optional[float] = None
    rmse3d: Optional[float] = None
    aoe: Optional[float] = None
    roe: Optional[float] = None
    per_point: dict = field(default_factory=dict)  # track id -> rmse2d
    subsets: dict = field(default_factory=dict)  # k -> (mean, std)


def per_point_rmse2d(annotations: AnnotationSet, tracks: Mapping) -> dict:
    out = {}
    for t in annotations.tracks:
        track = tracks.get(t.id)
        if track is None:
            continue
        frames, err = paired_errors(track.predicted(), t)
        if frames:
            out[t.id] = float(np.sqrt(np.mean(err * err)))
    return out


def vice_report(annotations: AnnotationSet, tracks: Optional[Mapping]) -> MetricReport:
    """RMSE2D between annotations and one source's tracks, with subsets."""
    if not tracks:
        return MetricReport()
    per_point = per_point_rmse2d(annotations, tracks)
    if not per_point:
        raise NoOverlapError("no annotated frame overlaps the tracked frames")
    vals = [per_point[k] for k in sorted(per_point)]
    subsets = {k: subset_aggregate(vals, k) for k in range(1, len(vals) + 1)}
    pooled = []
    for t in annotations.tracks:
        if t.id in tracks:
            pooled.extend(paired_errors(tracks[t.id].predicted(), t)[1])
    pooled = np.asarray(pooled)
    return MetricReport(
        rmse2d=float(np.sqrt(np.mean(pooled * pooled))),
        per_point=per_point,
        subsets=subsets,
    )


def pose_report(gt: Optional[PoseTrajectory], est: Optional[PoseTrajectory], stride=DEFAULT_ROE_STRIDE) -> MetricReport:
    if gt is None or est is None:
        return MetricReport()
    return MetricReport(rmse3d=rmse3d(gt, est), aoe=aoe(gt, est), roe=roe(gt, est, stride))


def delta_report(
    annotations: AnnotationSet,
    tracks_by_source: Mapping,
    poses_by_source: Optional[Mapping] = None,
    gt_source: str = "mocap",
    onboard_source: str = "onboard",
    roe_stride: int = DEFAULT_ROE_STRIDE,
) -> dict:
    """The three comparisons of an evaluation run.

    Returns ``{"onboard_vs_gt": ..., "vice_vs_gt": ..., "vice_vs_onboard": ...}``
    with empty reports (all ``None``) where a source is missing.
    """
    poses_by_source = poses_by_source or {}
    return {
        "onboard_vs_gt": pose_report(poses_by_source.get(gt_source), poses_by_source.get(onboard_source), roe_stride),
        "vice_vs_gt": vice_report(annotations, tracks_by_source.get(gt_source)),
        "vice_vs_onboard": vice_report(annotations, tracks_by_source.get(onboard_source)),
    }


REPORT_HEADER = ["dataset", "sequence", "source", "depth_mode", "metric", "subset_size", "mean", "std"]


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return NA
    return f"{x:.6g}"


def report_rows(dataset, sequence, depth_mode, blocks, n_points: int, degrees=False, gt_source="mocap",
                onboard_source="onboard", include_pose=True) -> list:
    rows = []
    scale = 180.0 / math.pi if degrees else 1.0
    if include_pose:
        pose = blocks["onboard_vs_gt"]
        for metric, value, k in (("rmse3d", pose.rmse3d, 1.0), ("aoe", pose.aoe, scale), ("roe", pose.roe, scale)):
            name = metric + ("_deg" if degrees and metric != "rmse3d" else "")
            rows.append([dataset, sequence, onboard_source, "-", name, "",
                         fmt(None if value is None else value * k), ""])
    for source, key in ((gt_source, "vice_vs_gt"), (onboard_source, "vice_vs_onboard")):
        rep = blocks[key]
        for k in range(1, n_points + 1):
            mean, std = rep.subsets.get(k, (None, None))
            rows.append([dataset, sequence, source, depth_mode, "rmse2d", str(k), fmt(mean), fmt(std)])
    return rows


def write_report_csv(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    w.writerows(rows)


def format_table(title: str, per_mode_blocks: Mapping, n_points: int, degrees=False) -> str:
    """Plain-text table: pose comparison, then VICE vs GT and vice vs on-board
    per depth mode, ``mean±std`` per subset size."""
    unit = "deg" if degrees else "rad"
    scale = 180.0 / math.pi if degrees else 1.0

    def pm(pair):
        mean, std = pair if pair else (None, None)
        if mean is None:
            return NA
        return f"{mean:.1f}±{std:.1f}"

    def val(x, s=1.0, p=3):
        return NA if x is None else f"{x * s:.{p}f}"

    cols = [f"{k} pt" for k in range(1, n_points + 1)]
    head = (["Depth", "RMSE[m]", f"AOE[{unit}]", f"ROE[{unit}]"]
            + [f"VG {c}" for c in cols] + [f"VO {c}" for c in cols])
    lines = [title, "  Δ(On-Board,GT) | Δ(VICE,GT)=VG | Δ(VICE,On-Board)=VO"]
    body = []
    for mode, blocks in per_mode_blocks.items():
        pose = blocks["onboard_vs_gt"]
        row = [mode, val(pose.rmse3d), val(pose.aoe, scale), val(pose.roe, scale)]
        row += [pm(blocks["vice_vs_gt"].subsets.get(k)) for k in range(1, n_points + 1)]
        row += [pm(blocks["vice_vs_onboard"].subsets.get(k)) for k in range(1, n_points + 1)]
        body.append(row)
    widths = [max(len(str(r[i])) for r in [head] + body) for i in range(len(head))]
    for r in [head] + body:
        lines.append("  ".join(str(c).rjust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


# time series -------------------------------------------------------------------

TIMESERIES_HEADER = ["frame", "err2d_px", "err3d_m", "aoe_rad", "respawn_flag"]


@dataclass
class ErrorSeries:
    frames: list
    err2d: list  # mean over tracks present at the frame, None when none
    err3d: list
    angle: list
    respawn: list

    def pixel_series(self) -> list:
        """(frame, error) pairs for frames with a 2-D error."""
        return [(k, e) for k, e in zip(self.frames, self.err2d) if e is not None]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMESERIES_HEADER)
        for row in zip(self.frames, self.err2d, self.err3d, self.angle, self.respawn):
            k, e2, e3, a, r = row
            w.writerow([k, "" if e2 is None else f"{e2:.9g}", "" if e3 is None else f"{e3:.9g}",
                        "" if a is None else f"{a:.9g}", int(r)])
        return buf.getvalue()


def error_timeseries(annotations, tracks, gt_poses: Optional[PoseTrajectory] = None,
                     est_poses: Optional[PoseTrajectory] = None, n_frames: Optional[int] = None) -> ErrorSeries:
    """Per-frame 2-D error averaged over tracks, plus per-frame position and
    orientation error of the pose stream and the respawn flags."""
    if isinstance(annotations, AnnotationTrack):
        annotations = AnnotationSet([annotations])
    if not isinstance(tracks, Mapping):
        tracks = {t.track_id: t for t in (tracks if isinstance(tracks, (list, tuple)) else [tracks])}
    if gt_poses is not None and est_poses is not None:
        _check_aligned(gt_poses, est_poses)
        pos = np.linalg.norm(gt_poses.translations - est_poses.translations, axis=1)
        ang = orientation_errors(gt_poses, est_poses)
    else:
        pos = ang = None
    if n_frames is None:
        n_frames = max(
            [len(gt_poses) if gt_poses is not None else 0]
            + [max(t.predicted(), default=-1) + 1 for t in tracks.values()]
        )
    sums = np.zeros(n_frames)
    counts = np.zeros(n_frames, dtype=int)
    respawn = np.zeros(n_frames, dtype=bool)
    for t in annotations.tracks:
        track = tracks.get(t.id)
        if track is None:
            continue
        for k in track.respawn_frames:
            if k < n_frames:
                respawn[k] = True
        frames, err = paired_errors(track.predicted(), t)
        for k, e in zip(frames, err):
            if k < n_frames:
                sums[k] += e
                counts[k] += 1
    err2d = [float(sums[k] / counts[k]) if counts[k] else None for k in range(n_frames)]
    return ErrorSeries(
        list(range(n_frames)),
        err2d,
        [None if pos is None or k >= len(pos) else float(pos[k]) for k in range(n_frames)],
        [None if ang is None or k >= len(ang) else float(ang[k]) for k in range(n_frames)],
        respawn.tolist(),
    )
