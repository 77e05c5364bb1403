import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vice.errors import AlignmentError, ExtrapolationError
from vice.geometry import FIXED, FrameId, Pose, compose, inverse, rot_z, rotation_exp
from vice.trajectory import (
    ABSOLUTE,
    RELATIVE,
    FrameSequence,
    PoseTrajectory,
    align_and_resample,
    slerp,
    subsample_indices,
)

MS = 1_000_000


def random_trajectory(seed, n=20, step_ns=100 * MS):
    rng = np.random.default_rng(seed)
    poses = [Pose(rotation_exp(rng.normal(size=3)), rng.normal(size=3)) for _ in range(n)]
    return PoseTrajectory(np.arange(n) * step_ns + 10**9, tuple(poses), ABSOLUTE, "test")


def test_labels_follow_convention():
    traj = random_trajectory(0, n=3)
    t = traj.timestamps
    assert traj.poses[1].from_frame == FrameId.body(t[1]) and traj.poses[1].to_frame == FIXED
    rel = traj.to_relative()
    assert rel.poses[0].from_frame == FIXED and rel.poses[0].to_frame == FrameId.body(t[0])
    assert rel.poses[2].from_frame == FrameId.body(t[1]) and rel.poses[2].to_frame == FrameId.body(t[2])


@given(st.integers(0, 10_000))
def test_relative_absolute_round_trip(seed):
    traj = random_trajectory(seed)
    rel = traj.to_relative()
    back = rel.to_absolute()
    for a, b in zip(traj.poses, back.poses):
        assert a.allclose(b, atol=1e-9)
    chain = rel.poses[0]
    for step in rel.poses[1:]:
        chain = compose(step, chain)
    assert chain.allclose(inverse(traj.poses[-1]), atol=1e-9)


def test_non_monotonic_rejected():
    with pytest.raises(AlignmentError):
        PoseTrajectory(np.array([1, 3, 2]), (Pose.identity(),) * 3)


def test_interpolate_exact_at_samples():
    traj = random_trajectory(1)
    got = traj.interpolate(traj.timestamps[[0, 5, 19]])
    for k, p in zip([0, 5, 19], got.poses):
        assert np.array_equal(p.rotation, traj.poses[k].rotation)
        assert np.array_equal(p.translation, traj.poses[k].translation)


def test_interpolate_midpoints():
    traj = PoseTrajectory(np.array([0, 2 * MS]), (Pose(np.eye(3), [0, 0, 0]), Pose(rot_z(np.pi / 2), [2, 0, 0])))
    mid = traj.interpolate([MS]).poses[0]
    assert np.allclose(mid.translation, [1, 0, 0], atol=1e-15)
    assert np.allclose(mid.rotation, rot_z(np.pi / 4), atol=1e-9)


def test_slerp_takes_short_arc():
    q0 = np.array([1.0, 0, 0, 0])
    q1 = -np.array([np.cos(0.1), 0, 0, np.sin(0.1)])
    q = slerp(q0, q1, 0.5)
    assert np.allclose(np.abs(q), [np.cos(0.05), 0, 0, np.sin(0.05)], atol=1e-12)


def test_interpolate_refuses_extrapolation():
    traj = random_trajectory(2)
    ts = traj.timestamps
    traj.interpolate([ts[-1] + 49 * MS])  # within half a sample
    with pytest.raises(ExtrapolationError) as e:
        traj.interpolate([ts[-1] + 51 * MS])
    assert str(ts[-1]) in str(e.value)
    with pytest.raises(ExtrapolationError):
        traj.interpolate([ts[0] - 60 * MS])


def test_interpolate_relative_input():
    traj = random_trajectory(3)
    q = (traj.timestamps[3] + traj.timestamps[4]) // 2
    a = traj.interpolate([q]).poses[0]
    b = traj.to_relative().interpolate([q]).poses[0]
    assert a.allclose(b, atol=1e-9)


def test_subsample_identity_at_native_rate():
    ts = np.arange(50) * 50 * MS
    assert subsample_indices(ts, None, None) == list(range(50))
    assert subsample_indices(ts, 20.0, None) == list(range(50))


def test_subsample_and_clip():
    ts = np.arange(100) * 50 * MS + 7  # 20 Hz
    assert subsample_indices(ts, 10.0, None) == list(range(0, 100, 2))
    assert subsample_indices(ts, 10.0, 1.0) == list(range(0, 20, 2))
    jitter = ts + np.random.default_rng(0).integers(-5 * MS, 5 * MS, 100)
    assert subsample_indices(jitter, 10.0, None) == list(range(0, 100, 2))


def test_align_and_resample_with_offset():
    poses = random_trajectory(4, n=40, step_ns=50 * MS)
    frames = FrameSequence(poses.timestamps[5:25:2], (), 0.0, 640, 480)
    aligned = align_and_resample(frames, poses, time_offset=0.1)
    assert len(aligned) == 10
    for k, p in enumerate(aligned.poses.poses):
        src = poses.poses[5 + 2 * k + 2]  # 0.1 s later = two samples
        assert np.allclose(p.rotation, src.rotation, atol=1e-12)
    assert aligned.poses.timestamps[0] == frames.timestamps[0]
    with pytest.raises(ExtrapolationError):
        align_and_resample(frames, poses, time_offset=1.5)


def test_frame_sequence_validation():
    with pytest.raises(AlignmentError):
        FrameSequence(np.array([1, 1]))
    fs = FrameSequence(np.array([0, 100 * MS, 200 * MS]))
    assert fs.rate_hz == pytest.approx(10.0) and fs.images == (None, None, None)
    assert fs.subset([0, 2]).source_index == (0, 2)


def test_shift_and_rebase():
    traj = random_trajectory(5, n=5)
    assert np.array_equal(traj.shifted(7).timestamps, traj.timestamps + 7)
    reb = traj.rebased()
    assert reb.poses[0].allclose(Pose.identity(), atol=1e-12)
    assert traj.to_relative().convention == RELATIVE
