import json

import numpy as np
import pytest
from PIL import Image

from vice.annotations import AnnotationPoint, AnnotationSet, AnnotationTrack, read_annotations, write_annotations
from vice.errors import (
    BoundsError,
    MalformedRowError,
    MissingInputError,
    NonMonotonicError,
    SceneSpecError,
    SchemaError,
)
from vice.euroc import load_euroc_sequence, read_pose_csv, read_sensor_yaml, write_pose_csv
from vice.geometry import rot_z
from vice.metrics import rmse2d
from vice.synth import NoiseSpec, SceneSpec, TrajectorySpec, synth_scene, with_noise, write_dataset
from vice.tracking import track_all
from vice.depth import FloorPlaneDepth
from vice.trajectory import align_and_resample

SENSOR_YAML = """%YAML:1.0
sensor_type: camera
rate_hz: 20
resolution: [752, 480]
camera_model: pinhole
intrinsics: [458.654, 457.296, 367.215, 248.375]
distortion_model: radial-tangential
distortion_coefficients: [-0.28340811, 0.07395907, 0.00019359, 1.76187114e-05]
T_BS:
  cols: 4
  rows: 4
  data: [0.0148655429818, -0.999880929698, 0.00414029679422, -0.0216401454975,
         0.999557249008, 0.0149672133247, 0.025715529948, -0.064676986768,
        -0.0257744366974, 0.00375618835797, 0.999660727178, 0.00981073058949,
         0.0, 0.0, 0.0, 1.0]
"""

GT_HEADER = "#timestamp, p_RS_R_x [m], p_RS_R_y [m], p_RS_R_z [m], q_RS_w [], q_RS_x [], q_RS_y [], q_RS_z [], v_x\n"
GT_ROWS = [
    "1403715273262142976,0.0,0.0,1.0,1.0,0.0,0.0,0.0,0.1\n",
    "1403715273312143104,0.1,0.0,1.0,0.7071068,0.0,0.0,0.7071068,0.1\n",
    "1403715273362142976,0.2,0.0,1.0,1.0,0.0,0.0,0.0,0.1\n",
    "1403715273412143104,0.3,0.0,1.0,1.0,0.0,0.0,0.0,0.1\n",
    "1403715273462142976,0.4,0.0,1.0,1.0,0.0,0.0,0.0,0.1\n",
]
FRAME_TS = [1403715273262142976, 1403715273312143104, 1403715273362142976]


def make_fixture(root, mav0=True, gt_rows=None):
    base = root / "mav0" if mav0 else root
    cam = base / "cam0"
    (cam / "data").mkdir(parents=True)
    (cam / "sensor.yaml").write_text(SENSOR_YAML)
    with (cam / "data.csv").open("w") as fh:
        fh.write("#timestamp [ns],filename\n")
        for t in FRAME_TS:
            fh.write(f"{t},{t}.png\n")
            Image.fromarray(np.zeros((480, 752), np.uint8)).save(cam / "data" / f"{t}.png")
    gt = base / "state_groundtruth_estimate0"
    gt.mkdir()
    (gt / "data.csv").write_text(GT_HEADER + "".join(gt_rows or GT_ROWS))
    return root


@pytest.mark.parametrize("mav0", [True, False])
def test_euroc_fixture_loads(tmp_path, mav0):
    seq = load_euroc_sequence(make_fixture(tmp_path, mav0))
    frames, cam, rig, trajs = seq
    assert frames.timestamps.tolist() == FRAME_TS
    assert frames.rate_hz == 20.0 and all(frames.images)
    assert (cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height) == (458.654, 457.296, 367.215, 248.375, 752, 480)
    assert cam.opencv_distortion[:4].tolist() == [-0.28340811, 0.07395907, 0.00019359, 1.76187114e-05]
    assert rig.body_from_camera.translation.tolist() == [-0.0216401454975, -0.064676986768, 0.00981073058949]
    assert seq.sources == ["mocap"]
    gt = seq.trajectory("mocap")
    assert len(gt) == 5
    assert gt.translations[:, 0].tolist() == [0.0, 0.1, 0.2, 0.3, 0.4]
    assert np.allclose(gt.rotations[0], np.eye(3))
    assert np.allclose(gt.rotations[1], rot_z(np.pi / 2), atol=1e-6)


def test_swapped_timestamps_name_the_row(tmp_path):
    rows = list(GT_ROWS)
    rows[2], rows[3] = rows[3], rows[2]
    make_fixture(tmp_path, gt_rows=rows)
    with pytest.raises(NonMonotonicError) as e:
        load_euroc_sequence(tmp_path)
    assert e.value.line == 5 and "data.csv:5" in str(e.value)


@pytest.mark.parametrize("row, fragment", [
    ("1403715273512142976,0.5,0.0,1.0\n", "columns"),
    ("1403715273512142976,0.5,abc,1.0,1.0,0.0,0.0,0.0\n", "non-numeric"),
    ("14037152735.5,0.5,0.0,1.0,1.0,0.0,0.0,0.0\n", "timestamp"),
])
def test_malformed_rows_are_located(tmp_path, row, fragment):
    make_fixture(tmp_path, gt_rows=GT_ROWS + [row])
    with pytest.raises(MalformedRowError) as e:
        load_euroc_sequence(tmp_path)
    assert e.value.line == 7 and fragment in str(e.value)
    assert e.value.path.endswith("state_groundtruth_estimate0/data.csv")


def test_missing_inputs(tmp_path):
    with pytest.raises(MissingInputError):
        load_euroc_sequence(tmp_path / "nope")
    make_fixture(tmp_path)
    (tmp_path / "mav0" / "cam0" / "data" / f"{FRAME_TS[1]}.png").unlink()
    with pytest.raises(MissingInputError) as e:
        load_euroc_sequence(tmp_path)
    assert "data.csv:3" in str(e.value)
    load_euroc_sequence(tmp_path, check_images=False)
    with pytest.raises(MissingInputError):
        read_pose_csv(tmp_path / "missing.csv")
    with pytest.raises(MissingInputError):
        read_sensor_yaml(tmp_path / "sensor.yaml")


def test_image_size_mismatch(tmp_path):
    make_fixture(tmp_path)
    Image.fromarray(np.zeros((10, 10), np.uint8)).save(tmp_path / "mav0" / "cam0" / "data" / f"{FRAME_TS[0]}.png")
    with pytest.raises(MalformedRowError) as e:
        load_euroc_sequence(tmp_path)
    assert e.value.line == 2


def test_pose_csv_round_trip(tmp_path, scene):
    path = tmp_path / "p.csv"
    write_pose_csv(path, scene.true_trajectory)
    back = read_pose_csv(path, source="x")
    assert np.array_equal(back.timestamps, scene.true_trajectory.timestamps)
    assert np.allclose(back.translations, scene.true_trajectory.translations, atol=1e-15)
    assert np.allclose(back.rotations, scene.true_trajectory.rotations, atol=1e-12)


GOLDEN = """{
  "annotator": "alice",
  "sequence": "V1_01_easy",
  "tracks": [
    {
      "id": 0,
      "points": [
        {
          "frame": 0,
          "respawn": false,
          "u": 100.5,
          "v": 200.25
        },
        {
          "frame": 1,
          "respawn": false,
          "u": 101.123457,
          "v": 201.0
        },
        {
          "frame": 2,
          "respawn": true,
          "u": 30.0,
          "v": 40.0
        }
      ]
    }
  ]
}
"""


def test_golden_annotation_bytes(tmp_path):
    ann = AnnotationSet([AnnotationTrack(0, [
        AnnotationPoint(2, 30, 40, True),
        AnnotationPoint(0, 100.5, 200.25),
        AnnotationPoint(1, 101.1234567, 201.0),
    ])], sequence="V1_01_easy", annotator="alice")
    path = tmp_path / "a.json"
    write_annotations(ann, path)
    assert path.read_bytes() == GOLDEN.encode()
    write_annotations(read_annotations(path), tmp_path / "b.json")
    assert (tmp_path / "b.json").read_bytes() == path.read_bytes()


def test_empty_set_round_trip(tmp_path):
    path = tmp_path / "e.json"
    path.write_text('{"tracks": []}')
    ann = read_annotations(path)
    assert ann.tracks == []
    assert json.loads(ann.dumps()) == {"tracks": []}


def test_unknown_fields_preserved():
    doc = {"tracks": [{"id": 1, "colour": "red", "points": [{"frame": 0, "u": 1.0, "v": 2.0, "note": "x"}]}],
           "version": 3}
    out = AnnotationSet.from_dict(doc).to_dict()
    assert out["version"] == 3 and out["tracks"][0]["colour"] == "red"
    assert out["tracks"][0]["points"][0]["note"] == "x"


def test_bounds_and_schema_errors():
    doc = {"tracks": [{"id": 0, "points": [{"frame": 0, "u": 752.0, "v": 2.0}]}]}
    with pytest.raises(BoundsError) as e:
        AnnotationSet.from_dict(doc, image_size=(752, 480))
    assert e.value.pointer == "/tracks/0/points/0"
    AnnotationSet.from_dict(doc, image_size=(753, 480))
    with pytest.raises(SchemaError) as e:
        AnnotationSet.from_dict({"tracks": [{"id": 0, "points": [{"frame": -1, "u": 1, "v": 1}]}]})
    assert e.value.pointer == "/tracks/0/points/0/frame"
    with pytest.raises(SchemaError) as e:
        AnnotationSet.from_dict({"tracks": [{"id": 0, "points": [{"frame": 0, "u": 1, "v": 1},
                                                                 {"frame": 0, "u": 2, "v": 2}]}]})
    assert e.value.pointer == "/tracks/0/points/1/frame"
    with pytest.raises(SchemaError) as e:
        AnnotationSet.from_dict({"sequence": 1})
    assert e.value.pointer == ""


def test_invalid_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(SchemaError):
        read_annotations(p)
    with pytest.raises(MissingInputError):
        read_annotations(tmp_path / "none.json")


def test_synth_zero_noise_and_determinism():
    spec = TrajectorySpec(n_frames=20)
    a = synth_scene(3, spec)
    b = synth_scene(3, spec)
    assert a.noisy_trajectory is not None
    for p, q in zip(a.true_trajectory.poses, a.noisy_trajectory.poses):
        assert np.array_equal(p.rotation, q.rotation) and np.array_equal(p.translation, q.translation)
    assert a.annotations.dumps() == b.annotations.dumps()
    assert np.array_equal(a.landmarks, b.landmarks)
    c = synth_scene(4, spec)
    assert not np.array_equal(a.landmarks, c.landmarks)


def test_with_noise_matches_fresh_scene():
    spec = TrajectorySpec(n_frames=20)
    noise = NoiseSpec(rotation_sigma=0.01, translation_sigma=0.002, extrinsic_sigma=0.01)
    fresh = synth_scene(5, spec, noise_spec=noise)
    reused = with_noise(synth_scene(5, spec), noise)
    assert np.array_equal(fresh.noisy_trajectory.rotations, reused.noisy_trajectory.rotations)
    assert np.array_equal(fresh.rig_nominal.body_from_camera.rotation, reused.rig_nominal.body_from_camera.rotation)


def test_synth_annotations_are_true_projections(scene):
    for t in scene.annotations.tracks:
        for p in t.points[:20]:
            assert scene.camera.in_bounds(p.u, p.v)
    starts = scene.annotations.tracks[0].segment_starts()
    assert starts[0] == 0


def test_noisy_tracking_has_error():
    sc = synth_scene(0, TrajectorySpec(n_frames=300), noise_spec=NoiseSpec(rotation_sigma=0.01))
    aligned = align_and_resample(sc.frames, sc.noisy_trajectory)
    tracks = track_all(sc.annotations.tracks, len(aligned), aligned.poses, sc.rig, sc.camera,
                       FloorPlaneDepth(sc.floor), sc.true_camera_pose(0))
    errs = [rmse2d(tracks[t.id].predicted(), t) for t in sc.annotations.tracks]
    assert min(errs) > 0


def test_unplaceable_landmark():
    with pytest.raises(SceneSpecError):
        synth_scene(0, TrajectorySpec(n_frames=2), SceneSpec(cloud_extent=0.4))
    with pytest.raises(SceneSpecError):
        synth_scene(0, TrajectorySpec(n_frames=0))


def test_written_dataset_loads(tmp_path):
    sc = synth_scene(1, TrajectorySpec(n_frames=5))
    write_dataset(sc, tmp_path / "ds", images=True, depth_images=True)
    seq = load_euroc_sequence(tmp_path / "ds")
    assert seq.frames.timestamps.tolist() == sc.frames.timestamps.tolist()
    assert sorted(seq.sources) == ["mocap", "onboard"]
    assert seq.pointcloud_path is not None
    assert read_annotations(tmp_path / "ds" / "annotations.json").dumps() == sc.annotations.dumps()
