"""Pure numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` operation for operation; the compiled module is
preferred when it imports. Coefficient order everywhere is
``(k1, k2, k3, k4, k5, k6, p1, p2)``.
"""

from __future__ import annotations

import numpy as np

MAX_HALVINGS = 8


def _radial_terms(r2, c):
    num = 1.0 + r2 * (c[0] + r2 * (c[1] + r2 * c[2]))
    den = 1.0 + r2 * (c[3] + r2 * (c[4] + r2 * c[5]))
    dnum = c[0] + r2 * (2.0 * c[1] + 3.0 * r2 * c[2])
    dden = c[3] + r2 * (2.0 * c[4] + 3.0 * r2 * c[5])
    radial = num / den
    dradial = (dnum * den - num * dden) / (den * den)
    return radial, dradial


def distort_points(x, y, coeffs):
    """Apply the rational radial + tangential model to normalized coordinates."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c = np.asarray(coeffs, dtype=np.float64)
    p1, p2 = c[6], c[7]
    r2 = x * x + y * y
    radial, _ = _radial_terms(r2, c)
    xy = x * y
    xd = x * radial + 2.0 * p1 * xy + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * xy
    return xd, yd


def _residual(x, y, xd, yd, c):
    fx, fy = distort_points(x, y, c)
    ex = fx - xd
    ey = fy - yd
    return ex, ey, np.sqrt(ex * ex + ey * ey)


def undistort_points(xd, yd, coeffs, max_iter=50, tol=1e-12):
    """Invert ``distort_points`` with damped Newton steps.

    Returns ``(x, y, residual)``; ``residual`` is the per-point norm of
    ``distort(x, y) - (xd, yd)`` at exit. Callers decide what to do with
    points whose residual stayed above ``tol``.
    """
    xd = np.ascontiguousarray(xd, dtype=np.float64).ravel()
    yd = np.ascontiguousarray(yd, dtype=np.float64).ravel()
    c = np.asarray(coeffs, dtype=np.float64)
    p1, p2 = c[6], c[7]
    x = xd.copy()
    y = yd.copy()
    ex, ey, res = _residual(x, y, xd, yd, c)
    active = res > tol
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa, ya = x[idx], y[idx]
        r2 = xa * xa + ya * ya
        radial, dradial = _radial_terms(r2, c)
        j00 = radial + 2.0 * xa * xa * dradial + 2.0 * p1 * ya + 6.0 * p2 * xa
        j01 = 2.0 * xa * ya * dradial + 2.0 * p1 * xa + 2.0 * p2 * ya
        j10 = 2.0 * xa * ya * dradial + 2.0 * p1 * xa + 2.0 * p2 * ya
        j11 = radial + 2.0 * ya * ya * dradial + 6.0 * p1 * ya + 2.0 * p2 * xa
        det = j00 * j11 - j01 * j10
        singular = np.abs(det) < 1e-300
        det = np.where(singular, 1.0, det)
        sx = -(j11 * ex[idx] - j01 * ey[idx]) / det
        sy = -(-j10 * ex[idx] + j00 * ey[idx]) / det
        # singular Jacobian: plain fixed-point update instead
        tan_x = 2.0 * p1 * xa * ya + p2 * (r2 + 2.0 * xa * xa)
        tan_y = p1 * (r2 + 2.0 * ya * ya) + 2.0 * p2 * xa * ya
        sx = np.where(singular, (xd[idx] - tan_x) / radial - xa, sx)
        sy = np.where(singular, (yd[idx] - tan_y) / radial - ya, sy)

        step = np.ones_like(xa)
        best_x, best_y = xa + sx, ya + sy
        bex, bey, bres = _residual(best_x, best_y, xd[idx], yd[idx], c)
        worse = ~(bres < res[idx])
        for _ in range(MAX_HALVINGS):
            if not worse.any():
                break
            step = np.where(worse, step * 0.5, step)
            tx, ty = xa + step * sx, ya + step * sy
            tex, tey, tres = _residual(tx, ty, xd[idx], yd[idx], c)
            take = worse & (tres < res[idx])
            best_x = np.where(worse, tx, best_x)
            best_y = np.where(worse, ty, best_y)
            bex = np.where(worse, tex, bex)
            bey = np.where(worse, tey, bey)
            bres = np.where(worse, tres, bres)
            worse = worse & ~take
        stalled = worse & (bres >= res[idx])
        best_x = np.where(stalled, xa, best_x)
        best_y = np.where(stalled, ya, best_y)
        bex = np.where(stalled, ex[idx], bex)
        bey = np.where(stalled, ey[idx], bey)
        bres = np.where(stalled, res[idx], bres)

        x[idx], y[idx] = best_x, best_y
        ex[idx], ey[idx], res[idx] = bex, bey, bres
        active[idx] = (bres > tol) & ~stalled
    return x, y, res


def zbuffer(u, v, z, width, height):
    """Scatter depths into a ``(height, width)`` grid keeping the nearest.

    Pixels are chosen by rounding half up; points with ``z <= 0`` or landing
    outside the grid are dropped. Empty cells are NaN.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    z = np.asarray(z, dtype=np.float64).ravel()
    col = np.floor(u + 0.5)
    row = np.floor(v + 0.5)
    keep = (z > 0) & (col >= 0) & (col < width) & (row >= 0) & (row < height)
    keep &= np.isfinite(col) & np.isfinite(row)
    col = col[keep].astype(np.int64)
    row = row[keep].astype(np.int64)
    grid = np.full(height * width, np.inf)
    np.minimum.at(grid, row * width + col, z[keep])
    grid[np.isinf(grid)] = np.nan
    return grid.reshape(height, width)
