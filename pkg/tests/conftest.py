import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vice.geometry import CameraModel
from vice.synth import euroc_like_camera, synth_scene
from vice.trajectory import align_and_resample

settings.register_profile("vice", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("vice")


@pytest.fixture(scope="session")
def euroc_cam():
    return euroc_like_camera()


@pytest.fixture(scope="session")
def pinhole_cam():
    return CameraModel(100.0, 100.0, 320.0, 240.0, 640, 480)


@pytest.fixture(scope="session")
def scene():
    """Default synthetic scene (seed 0, no noise)."""
    return synth_scene(0)


@pytest.fixture(scope="session")
def scene_aligned(scene):
    return align_and_resample(scene.frames, scene.true_trajectory)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
