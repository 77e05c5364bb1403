"""Synthetic flat-floor scenes with known poses and a perfect annotator.

The body flies a smooth arc above the floor (``z = 0`` of the Fixed frame)
with a down-tilted camera. Landmarks are floor points chosen at integer
pixels of the frame where they are spawned, so a point-cloud depth map
sampled at those pixels is exact. When a landmark leaves the image the
annotator spawns a new one, exactly like a human would.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import kernels
from .annotations import AnnotationPoint, AnnotationSet, AnnotationTrack, write_annotations
from .depth import FloorPlaneConfig, write_depth_image, write_ply
from .errors import SceneSpecError
from .euroc import GT_DIR, write_pose_csv, write_sensor_yaml
from .geometry import CameraModel, Pose, compose, inverse, rot_x, rot_y, rot_z, rotation_exp
from .tracking import RigConfig
from .trajectory import ABSOLUTE, NS_PER_S, FrameSequence, PoseTrajectory

EUROC_CAM0 = dict(
    fx=458.654, fy=457.296, cx=367.215, cy=248.375, width=752, height=480,
    dist=(-0.28340811, 0.07395907, 0.00019359, 1.76187114e-05),
)


def euroc_like_camera() -> CameraModel:
    c = EUROC_CAM0
    return CameraModel.from_opencv(c["fx"], c["fy"], c["cx"], c["cy"], c["width"], c["height"], c["dist"])


@dataclass
class TrajectorySpec:
    n_frames: int = 300
    fps: float = 10.0
    pose_rate_hz: Optional[float] = None  # defaults to fps
    margin_s: float = 1.0  # pose coverage before/after the frames
    radius: float = 0.5
    arc_period_s: float = 40.0
    altitude: float = 1.4
    altitude_amplitude: float = 0.15
    altitude_period_s: float = 9.0
    yaw_amplitude: float = 0.15
    yaw_period_s: float = 7.0
    tilt_amplitude: float = 0.03
    camera_pitch_deg: float = 45.0
    camera_offset: tuple = (0.08, 0.0, -0.03)
    start_time_ns: int = 1_000_000_000_000


@dataclass
class SceneSpec:
    n_landmarks: int = 8
    spawn_fraction: float = 0.6
    cloud_spacing: float = 0.05
    cloud_extent: float = 6.0
    min_landmark_separation: float = 0.05
    distortion: bool = True


@dataclass
class NoiseSpec:
    rotation_sigma: float = 0.0  # rad per pose step
    translation_sigma: float = 0.0  # m per pose step
    time_offset_s: float = 0.0  # estimate clock = true clock + offset
    extrinsic_sigma: float = 0.0  # rad, perturbs the published extrinsic
    onset_frame: int = 0  # no noise on steps before this frame

    @property
    def is_zero(self) -> bool:
        return not (self.rotation_sigma or self.translation_sigma or self.time_offset_s)


@dataclass(eq=False)
class SynthScene:
    frames: FrameSequence
    camera: CameraModel
    rig: RigConfig  # true extrinsic
    rig_nominal: RigConfig  # published (possibly perturbed) extrinsic
    true_trajectory: PoseTrajectory
    noisy_trajectory: PoseTrajectory
    landmarks: np.ndarray  # (N, 3) Fixed frame, in spawn order
    annotations: AnnotationSet
    cloud: np.ndarray
    floor: FloorPlaneConfig
    spec: dict = field(default_factory=dict)

    def true_camera_pose(self, k: int) -> Pose:
        """Camera(frame k) -> Fixed under the true trajectory."""
        i = int(np.searchsorted(self.true_trajectory.timestamps, self.frames.timestamps[k]))
        body = self.true_trajectory.poses[i].relabel()
        return compose(body, self.rig.body_from_camera)


def _rig(spec: TrajectorySpec) -> Pose:
    b = np.radians(spec.camera_pitch_deg)
    x_c = [0.0, -1.0, 0.0]
    y_c = [-np.sin(b), 0.0, -np.cos(b)]
    z_c = [np.cos(b), 0.0, -np.sin(b)]
    return Pose(np.column_stack([x_c, y_c, z_c]), spec.camera_offset)


def _body_pose(spec: TrajectorySpec, t: float) -> Pose:
    phi = 2 * np.pi * t / spec.arc_period_s
    pos = [
        spec.radius * np.cos(phi),
        spec.radius * np.sin(phi),
        spec.altitude + spec.altitude_amplitude * np.sin(2 * np.pi * t / spec.altitude_period_s),
    ]
    yaw = phi + np.pi / 2 + spec.yaw_amplitude * np.sin(2 * np.pi * t / spec.yaw_period_s)
    pitch = spec.tilt_amplitude * np.sin(2 * np.pi * t / 5.3)
    roll = spec.tilt_amplitude * np.cos(2 * np.pi * t / 6.1)
    return Pose(rot_z(yaw) @ rot_y(pitch) @ rot_x(roll), pos)


def _timeline(spec: TrajectorySpec):
    frame_ns = int(round(NS_PER_S / spec.fps))
    rate = spec.pose_rate_hz or spec.fps
    pose_ns = int(round(NS_PER_S / rate))
    frames = spec.start_time_ns + frame_ns * np.arange(spec.n_frames, dtype=np.int64)
    lo = frames[0] - int(spec.margin_s * NS_PER_S)
    hi = frames[-1] + int(spec.margin_s * NS_PER_S)
    j0 = -((frames[0] - lo) // pose_ns)
    j1 = (hi - frames[0]) // pose_ns
    poses = frames[0] + pose_ns * np.arange(j0, j1 + 1, dtype=np.int64)
    return frames, poses


def _floor_grid(scene: SceneSpec) -> np.ndarray:
    n = int(round(2 * scene.cloud_extent / scene.cloud_spacing)) + 1
    g = np.linspace(-scene.cloud_extent, scene.cloud_extent, n)
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])


def _ray_floor(cam: CameraModel, cam_pose: Pose, uv) -> Optional[np.ndarray]:
    ray = cam_pose.rotation @ cam.unproject_points([uv], 1.0)[0]
    if not ray[2] < 0:
        return None
    c = cam_pose.translation
    return c + (-c[2] / ray[2]) * ray


def _pixel(cam: CameraModel, cam_pose: Pose, X):
    p = inverse(cam_pose).apply(X)
    if not p[2] > 0:
        return None
    if np.hypot(p[0] / p[2], p[1] / p[2]) >= cam.max_valid_radius:
        return None
    return cam.project_points(p[None, :])[0]


class _Spawner:
    def __init__(self, cam, scene: SceneSpec, rng, cloud):
        self.cam = cam
        self.scene = scene
        self.rng = rng
        self.cloud = cloud
        self.landmarks = []

    def _occupied(self, cam_pose: Pose, col: int, row: int, X: np.ndarray) -> bool:
        # only floor points near X can share its pixel
        pts = np.vstack([self.cloud] + ([np.array(self.landmarks)] if self.landmarks else []))
        pts = inverse(cam_pose).apply(pts[np.max(np.abs(pts - X), axis=1) < 1.0])
        pts = pts[pts[:, 2] > 0]
        r = np.hypot(pts[:, 0] / pts[:, 2], pts[:, 1] / pts[:, 2])
        pts = pts[r < self.cam.max_valid_radius]
        uv = self.cam.project_points(pts)
        hit = (np.floor(uv[:, 0] + 0.5) == col) & (np.floor(uv[:, 1] + 0.5) == row)
        return bool(hit.any())

    def spawn(self, cam_pose: Pose, frame: int, tries: int = 200):
        cam, f = self.cam, self.scene.spawn_fraction
        lo_u, hi_u = int(np.ceil(0.5 * (1 - f) * cam.width)), int(np.floor(0.5 * (1 + f) * cam.width))
        lo_v, hi_v = int(np.ceil(0.5 * (1 - f) * cam.height)), int(np.floor(0.5 * (1 + f) * cam.height))
        for _ in range(tries):
            col = int(self.rng.integers(lo_u, hi_u))
            row = int(self.rng.integers(lo_v, hi_v))
            X = _ray_floor(cam, cam_pose, (float(col), float(row)))
            if X is None or np.hypot(X[0], X[1]) > self.scene.cloud_extent - 0.5:
                continue
            if self.landmarks and np.min(np.linalg.norm(np.array(self.landmarks) - X, axis=1)) < self.scene.min_landmark_separation:
                continue
            if self._occupied(cam_pose, col, row, X):
                continue
            X[2] = 0.0
            self.landmarks.append(X)
            return X, (float(col), float(row))
        raise SceneSpecError(f"could not place a visible floor landmark at frame {frame}")


def _noisy(true_abs: PoseTrajectory, noise: NoiseSpec, rng, onset_ns: int) -> PoseTrajectory:
    if noise.is_zero:
        return true_abs.with_source("onboard")
    rel = true_abs.to_relative()
    n = len(rel)
    rot = rng.standard_normal((n, 3))
    trans = rng.standard_normal((n, 3))
    steps = [rel.poses[0]]
    for j in range(1, n):
        step = rel.poses[j]
        if rel.timestamps[j] > onset_ns and (noise.rotation_sigma or noise.translation_sigma):
            N = Pose(rotation_exp(noise.rotation_sigma * rot[j]), noise.translation_sigma * trans[j])
            step = compose(N.relabel(step.to_frame, step.to_frame), step)
        steps.append(step)
    noisy = PoseTrajectory(rel.timestamps, tuple(steps), rel.convention, "onboard").to_absolute()
    if noise.time_offset_s:
        noisy = noisy.shifted(int(round(noise.time_offset_s * NS_PER_S)))
    return noisy


def _perturb(rig: RigConfig, true_abs, frame_ts, nspec: NoiseSpec, noise_rng):
    """Nominal extrinsic and onboard estimate, in a fixed draw order."""
    rig_nominal = rig
    if nspec.extrinsic_sigma:
        perturb = rotation_exp(nspec.extrinsic_sigma * noise_rng.standard_normal(3))
        R = rig.body_from_camera.rotation
        rig_nominal = RigConfig(Pose(R @ perturb, rig.body_from_camera.translation))
    onset_ns = int(frame_ts[min(nspec.onset_frame, len(frame_ts) - 1)]) if nspec.onset_frame else -1
    return rig_nominal, _noisy(true_abs, nspec, noise_rng, onset_ns)


def with_noise(scene: "SynthScene", noise_spec: NoiseSpec) -> "SynthScene":
    """The same scene with a different noise setting.

    Equivalent to calling ``synth_scene`` again with the same seed and specs
    but ``noise_spec``, without rebuilding the landmarks.
    """
    noise_rng = np.random.default_rng(np.random.SeedSequence(scene.spec["seed"]).spawn(2)[1])
    rig_nominal, noisy = _perturb(scene.rig, scene.true_trajectory, scene.frames.timestamps, noise_spec, noise_rng)
    spec = dict(scene.spec, noise=asdict(noise_spec))
    return replace(scene, rig_nominal=rig_nominal, noisy_trajectory=noisy, spec=spec)


def synth_scene(
    seed: int = 0,
    trajectory_spec: Optional[TrajectorySpec] = None,
    scene_spec: Optional[SceneSpec] = None,
    noise_spec: Optional[NoiseSpec] = None,
) -> SynthScene:
    """Build a deterministic synthetic sequence for ``seed``.

    Scene layout and noise draw from independent streams, so two calls that
    differ only in noise magnitude share landmarks and noise directions.
    """
    tspec = trajectory_spec or TrajectorySpec()
    sspec = scene_spec or SceneSpec()
    nspec = noise_spec or NoiseSpec()
    if tspec.n_frames < 1 or sspec.n_landmarks < 1:
        raise SceneSpecError("need at least one frame and one landmark")
    scene_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    cam = euroc_like_camera()
    if not sspec.distortion:
        cam = CameraModel(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)
    rig_pose = _rig(tspec)
    rig = RigConfig(rig_pose)

    frame_ts, pose_ts = _timeline(tspec)
    t0 = frame_ts[0]
    true_abs = PoseTrajectory(
        pose_ts, tuple(_body_pose(tspec, (t - t0) / NS_PER_S) for t in pose_ts), ABSOLUTE, "mocap"
    )
    frames = FrameSequence(frame_ts, (), tspec.fps, cam.width, cam.height)
    frame_pose = {int(t): i for i, t in enumerate(pose_ts)}

    def cam_pose(k):
        body = true_abs.poses[frame_pose[int(frame_ts[k])]].relabel()
        return compose(body, rig_pose)

    cloud = _floor_grid(sspec)
    spawner = _Spawner(cam, sspec, scene_rng, cloud)
    pose0 = cam_pose(0)
    tracks = []
    active = []
    for i in range(sspec.n_landmarks):
        X, uv = spawner.spawn(pose0, 0)
        tr = AnnotationTrack(i, [AnnotationPoint(0, uv[0], uv[1], False)])
        tracks.append(tr)
        active.append(X)
    for k in range(1, tspec.n_frames):
        pose_k = cam_pose(k)
        for i, tr in enumerate(tracks):
            uv = _pixel(cam, pose_k, active[i])
            if uv is None or not cam.in_bounds(uv[0], uv[1]):
                active[i], spawn_uv = spawner.spawn(pose_k, k)
                tr.points.append(AnnotationPoint(k, spawn_uv[0], spawn_uv[1], True))
            else:
                tr.points.append(AnnotationPoint(k, float(uv[0]), float(uv[1]), False))
    annotations = AnnotationSet(tracks, sequence=f"synth-{seed}", annotator="synthetic")

    rig_nominal, noisy = _perturb(rig, true_abs, frame_ts, nspec, noise_rng)
    landmarks = np.array(spawner.landmarks)
    spec = {
        "seed": seed,
        "trajectory": asdict(tspec),
        "scene": asdict(sspec),
        "noise": asdict(nspec),
    }
    return SynthScene(
        frames, cam, rig, rig_nominal, true_abs, noisy, landmarks, annotations,
        np.vstack([cloud, landmarks]), FloorPlaneConfig(pose0), spec,
    )


# rendering / writing -----------------------------------------------------------

class FloorRenderer:
    """Grey-level images of the floor: a checkerboard with dark landmark discs."""

    def __init__(self, cam: CameraModel, landmarks: np.ndarray, disc_radius: float = 0.03):
        self.cam = cam
        self.landmarks = np.asarray(landmarks)
        self.disc_radius = disc_radius
        vv, uu = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)
        xd = (uu.ravel() - cam.cx) / cam.fx
        yd = (vv.ravel() - cam.cy) / cam.fy
        if cam.has_distortion:
            x, y, _ = kernels.undistort_points(xd, yd, cam.coeffs)
        else:
            x, y = xd, yd
        self.rays = np.column_stack([x, y, np.ones_like(x)])

    def render(self, cam_pose: Pose) -> np.ndarray:
        h, w = self.cam.height, self.cam.width
        R, c = cam_pose.rotation, cam_pose.translation
        rays = self.rays @ R.T
        img = np.full(len(rays), 200.0)
        down = rays[:, 2] < -1e-9
        t = -c[2] / rays[down, 2]
        xy = np.full((len(rays), 2), np.nan)
        xy[down] = c[:2] + t[:, None] * rays[down, :2]
        check = (np.floor(xy[down, 0] / 0.5) + np.floor(xy[down, 1] / 0.5)) % 2
        img[down] = 90.0 + 60.0 * check + 15.0 * np.sin(xy[down, 0] * 23.0) * np.cos(xy[down, 1] * 17.0)
        img = img.reshape(h, w)
        xy = xy.reshape(h, w, 2)
        outer = 1.6 * self.disc_radius
        for X in self.landmarks:
            uv = _pixel(self.cam, cam_pose, X)
            if uv is None:
                continue
            z = float(inverse(cam_pose).apply(X)[2])
            half = int(np.ceil(2.0 * max(self.cam.fx, self.cam.fy) * outer / z)) + 2
            c0, c1 = max(int(uv[0]) - half, 0), min(int(uv[0]) + half + 1, w)
            r0, r1 = max(int(uv[1]) - half, 0), min(int(uv[1]) + half + 1, h)
            if c0 >= c1 or r0 >= r1:
                continue
            win = xy[r0:r1, c0:c1]
            d = np.hypot(win[..., 0] - X[0], win[..., 1] - X[1])
            patch = img[r0:r1, c0:c1]
            patch[(d >= self.disc_radius) & (d < outer)] = 245.0
            patch[d < self.disc_radius] = 15.0
        return np.clip(img, 0, 255).astype(np.uint8)

    def depth(self, cam_pose: Pose) -> np.ndarray:
        """Camera-frame z of the floor behind every pixel; NaN above the horizon."""
        R, c = cam_pose.rotation, cam_pose.translation
        rays = self.rays @ R.T
        out = np.full(len(rays), np.nan)
        down = rays[:, 2] < -1e-9
        out[down] = -c[2] / rays[down, 2]  # camera rays have unit z
        return out.reshape(self.cam.height, self.cam.width)


def write_dataset(scene: SynthScene, out_dir, images: bool = True, depth_images: bool = False) -> Path:
    """Write the scene as an EuRoC-style directory (see ``vice.euroc``).

    ``depth_images`` adds ``depth0/`` with the true floor depth per frame
    (about 1.4 MB each at the default resolution).
    """
    out = Path(out_dir)
    cam_dir = out / "cam0"
    (cam_dir / "data").mkdir(parents=True, exist_ok=True)
    write_sensor_yaml(cam_dir / "sensor.yaml", scene.camera, scene.rig_nominal, scene.frames.rate_hz)
    renderer = FloorRenderer(scene.camera, scene.landmarks) if images or depth_images else None
    with (cam_dir / "data.csv").open("w", newline="\n") as fh:
        fh.write("#timestamp [ns],filename\n")
        for k, t in enumerate(scene.frames.timestamps.tolist()):
            name = f"{t}.png"
            fh.write(f"{t},{name}\n")
            if images:
                Image.fromarray(renderer.render(scene.true_camera_pose(k))).save(cam_dir / "data" / name, optimize=False)
    if depth_images:
        (out / "depth0" / "data").mkdir(parents=True, exist_ok=True)
        with (out / "depth0" / "data.csv").open("w", newline="\n") as fh:
            fh.write("#timestamp [ns],filename\n")
            for k, t in enumerate(scene.frames.timestamps.tolist()):
                fh.write(f"{t},{t}.depth\n")
                write_depth_image(out / "depth0" / "data" / f"{t}.depth", renderer.depth(scene.true_camera_pose(k)))
    write_pose_csv(out / GT_DIR / "data.csv", scene.true_trajectory)
    write_pose_csv(out / "onboard0" / "data.csv", scene.noisy_trajectory)
    (out / "pointcloud0").mkdir(exist_ok=True)
    write_ply(out / "pointcloud0" / "data.ply", scene.cloud)
    write_annotations(scene.annotations, out / "annotations.json")
    (out / "synth.json").write_text(json.dumps(scene.spec, sort_keys=True, indent=2) + "\n")
    return out
