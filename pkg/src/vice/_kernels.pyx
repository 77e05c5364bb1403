# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics match ``vice._kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, fabs, isfinite, NAN

cnp.import_array()

cdef int MAX_HALVINGS = 8


cdef inline void _distort(double x, double y, const double[::1] c,
                          double* xd, double* yd) noexcept nogil:
    cdef double r2 = x * x + y * y
    cdef double num = 1.0 + r2 * (c[0] + r2 * (c[1] + r2 * c[2]))
    cdef double den = 1.0 + r2 * (c[3] + r2 * (c[4] + r2 * c[5]))
    cdef double radial = num / den
    cdef double xy = x * y
    xd[0] = x * radial + 2.0 * c[6] * xy + c[7] * (r2 + 2.0 * x * x)
    yd[0] = y * radial + c[6] * (r2 + 2.0 * y * y) + 2.0 * c[7] * xy


def distort_points(x, y, coeffs):
    cdef double[::1] xs = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef double[::1] ys = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef double[::1] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0], i
    out_x = np.empty(n)
    out_y = np.empty(n)
    cdef double[::1] ox = out_x
    cdef double[::1] oy = out_y
    with nogil:
        for i in range(n):
            _distort(xs[i], ys[i], c, &ox[i], &oy[i])
    return out_x.reshape(np.shape(x)), out_y.reshape(np.shape(y))


def undistort_points(xd, yd, coeffs, int max_iter=50, double tol=1e-12):
    cdef double[::1] txs = np.ascontiguousarray(xd, dtype=np.float64).ravel()
    cdef double[::1] tys = np.ascontiguousarray(yd, dtype=np.float64).ravel()
    cdef double[::1] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef Py_ssize_t n = txs.shape[0], i
    cdef int it, h
    cdef double x, y, tx, ty, fx, fy, ex, ey, res, r2, num, den, dnum, dden
    cdef double radial, dradial, j00, j01, j10, j11, det, sx, sy, step
    cdef double nx, ny, nex, ney, nres, p1 = c[6], p2 = c[7]
    cdef bint improved
    out_x = np.empty(n)
    out_y = np.empty(n)
    out_r = np.empty(n)
    cdef double[::1] ox = out_x
    cdef double[::1] oy = out_y
    cdef double[::1] orr = out_r
    with nogil:
        for i in range(n):
            tx = txs[i]
            ty = tys[i]
            x = tx
            y = ty
            _distort(x, y, c, &fx, &fy)
            ex = fx - tx
            ey = fy - ty
            res = sqrt(ex * ex + ey * ey)
            for it in range(max_iter):
                if res <= tol:
                    break
                r2 = x * x + y * y
                num = 1.0 + r2 * (c[0] + r2 * (c[1] + r2 * c[2]))
                den = 1.0 + r2 * (c[3] + r2 * (c[4] + r2 * c[5]))
                dnum = c[0] + r2 * (2.0 * c[1] + 3.0 * r2 * c[2])
                dden = c[3] + r2 * (2.0 * c[4] + 3.0 * r2 * c[5])
                radial = num / den
                dradial = (dnum * den - num * dden) / (den * den)
                j00 = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x
                j01 = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y
                j10 = j01
                j11 = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x
                det = j00 * j11 - j01 * j10
                if fabs(det) < 1e-300:
                    sx = (tx - (2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x))) / radial - x
                    sy = (ty - (p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y)) / radial - y
                else:
                    sx = -(j11 * ex - j01 * ey) / det
                    sy = -(-j10 * ex + j00 * ey) / det
                step = 1.0
                improved = False
                for h in range(MAX_HALVINGS + 1):
                    nx = x + step * sx
                    ny = y + step * sy
                    _distort(nx, ny, c, &fx, &fy)
                    nex = fx - tx
                    ney = fy - ty
                    nres = sqrt(nex * nex + ney * ney)
                    if nres < res:
                        improved = True
                        break
                    step *= 0.5
                if not improved:
                    break
                x = nx
                y = ny
                ex = nex
                ey = ney
                res = nres
            ox[i] = x
            oy[i] = y
            orr[i] = res
    return out_x, out_y, out_r


def zbuffer(u, v, z, Py_ssize_t width, Py_ssize_t height):
    cdef double[::1] us = np.ascontiguousarray(u, dtype=np.float64).ravel()
    cdef double[::1] vs = np.ascontiguousarray(v, dtype=np.float64).ravel()
    cdef double[::1] zs = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef Py_ssize_t n = us.shape[0], i, row, col
    cdef double fc, fr
    grid = np.full((height, width), np.nan)
    cdef double[:, ::1] g = grid
    with nogil:
        for i in range(n):
            if not zs[i] > 0:
                continue
            fc = floor(us[i] + 0.5)
            fr = floor(vs[i] + 0.5)
            if not (isfinite(fc) and isfinite(fr)):
                continue
            if fc < 0 or fr < 0 or fc >= width or fr >= height:
                continue
            col = <Py_ssize_t>fc
            row = <Py_ssize_t>fr
            if g[row, col] != g[row, col] or zs[i] < g[row, col]:
                g[row, col] = zs[i]
    return grid
