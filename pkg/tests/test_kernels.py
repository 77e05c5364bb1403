import subprocess
import sys

import numpy as np
import pytest

from vice import _kernels_py, kernels
from vice.synth import euroc_like_camera

compiled = kernels.backends().get("cython")
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(5)
    cam = euroc_like_camera()
    n = 20000
    x, y = rng.uniform(-0.7, 0.7, n), rng.uniform(-0.5, 0.5, n)
    u = rng.uniform(-2, cam.width + 2, n)
    v = rng.uniform(-2, cam.height + 2, n)
    z = rng.uniform(0.3, 9.0, n)
    return cam, x, y, u, v, z


def test_active_backend_is_exposed():
    assert kernels.BACKEND in ("cython", "python")
    import vice

    assert vice.BACKEND == kernels.BACKEND


@needs_compiled
def test_distort_parity(data):
    cam, x, y, *_ = data
    a = _kernels_py.distort_points(x, y, cam.coeffs)
    b = compiled.distort_points(x, y, cam.coeffs)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@needs_compiled
def test_undistort_parity(data):
    cam, x, y, *_ = data
    xd, yd = _kernels_py.distort_points(x, y, cam.coeffs)
    a = _kernels_py.undistort_points(xd, yd, cam.coeffs, 50, 1e-12)
    b = compiled.undistort_points(xd, yd, cam.coeffs, 50, 1e-12)
    for p, q in zip(a, b):
        assert np.max(np.abs(p - q)) < 1e-14
    assert np.max(np.abs(a[0] - x)) < 1e-11 and np.max(np.abs(a[1] - y)) < 1e-11


@needs_compiled
def test_zbuffer_parity(data):
    cam, _, _, u, v, z = data
    a = _kernels_py.zbuffer(u, v, z, cam.width, cam.height)
    b = compiled.zbuffer(u, v, z, cam.width, cam.height)
    assert np.array_equal(a, b, equal_nan=True)


@pytest.mark.parametrize("impl", [_kernels_py] + ([compiled] if compiled else []), ids=lambda m: m.__name__)
def test_zbuffer_rules(impl):
    u = np.array([3.49, 3.5, 2.6, -0.5, -0.51, 9.49, 9.5])
    v = np.array([1.0, 1.0, 1.2, 0.0, 0.0, 0.0, 0.0])
    z = np.array([5.0, 2.0, 4.0, 1.0, 1.0, 7.0, 7.0])
    grid = impl.zbuffer(u, v, z, 10, 3)
    assert grid[1, 3] == 4.0  # 3.49 and 2.6 round to column 3, nearest kept
    assert grid[1, 4] == 2.0  # halves round up
    assert grid[0, 0] == 1.0 and grid[0, 9] == 7.0
    assert np.count_nonzero(np.isfinite(grid)) == 4


def test_pure_python_switch():
    code = "import vice.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"VICE_PURE_PYTHON": "1", "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"
