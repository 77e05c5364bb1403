"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 1000,10000,100000] [--repeat 5]

Prints one row per (kernel, size) with the best-of-N time of each backend,
the speed-up and the largest difference between their outputs.
"""

import argparse
import sys
import timeit

import numpy as np

from vice import kernels
from vice.synth import euroc_like_camera


def _inputs(n, rng):
    cam = euroc_like_camera()
    x = rng.uniform(-0.6, 0.6, n)
    y = rng.uniform(-0.4, 0.4, n)
    u = rng.uniform(-0.5, cam.width - 0.5, n)
    v = rng.uniform(-0.5, cam.height - 0.5, n)
    z = rng.uniform(0.5, 5.0, n)
    return cam, x, y, u, v, z


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(p, q) for p, q in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    both = np.isfinite(a) & np.isfinite(b)
    if not np.array_equal(np.isfinite(a), np.isfinite(b)):
        return float("inf")
    return float(np.max(np.abs(a[both] - b[both]))) if both.any() else 0.0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000,10000,100000")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    found = kernels.backends()
    if "cython" not in found:
        print("compiled backend not built; only the numpy fallback is available", file=sys.stderr)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<12}{'n':>9}" + "".join(f"{name + ' [ms]':>16}" for name in found) + f"{'speed-up':>11}{'max diff':>12}")
    for n in (int(s) for s in args.sizes.split(",")):
        cam, x, y, u, v, z = _inputs(n, rng)
        coeffs = cam.coeffs
        xd, yd = found["python"].distort_points(x, y, coeffs)
        cases = {
            "distort": lambda m: m.distort_points(x, y, coeffs),
            "undistort": lambda m: m.undistort_points(xd, yd, coeffs),
            "zbuffer": lambda m: m.zbuffer(u, v, z, cam.width, cam.height),
        }
        for name, call in cases.items():
            times = {b: min(timeit.repeat(lambda: call(m), number=1, repeat=args.repeat)) for b, m in found.items()}
            outputs = {b: call(m) for b, m in found.items()}
            diff = _max_diff(outputs["python"], outputs["cython"]) if "cython" in outputs else 0.0
            speed = times["python"] / times["cython"] if "cython" in times else 1.0
            row = "".join(f"{1e3 * times[b]:>16.3f}" for b in found)
            print(f"{name:<12}{n:>9}{row}{speed:>10.1f}x{diff:>12.2e}")


if __name__ == "__main__":
    main()
