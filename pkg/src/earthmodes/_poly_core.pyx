# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled evaluation core for Cartesian monomial tables.

Hot kernels behind basis-function tabulation on quadrature grids.  The
pure-NumPy twin lives in ``_poly_core_py``; both must stay bit-compatible
within floating-point reassociation tolerance.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def eval_monomial_table(points, exponents, coefficients):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    exps = np.ascontiguousarray(exponents, dtype=np.int64)
    coef = np.ascontiguousarray(coefficients, dtype=np.float64)

    cdef double[:, ::1] p = pts
    cdef long long[:, ::1] e = exps
    cdef double[::1] c = coef
    cdef Py_ssize_t q = p.shape[0], ne = e.shape[0]

    val_arr = np.zeros(q)
    grad_arr = np.zeros((q, 3))
    hess_arr = np.zeros((q, 3, 3))
    cdef double[::1] val = val_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, :, ::1] hess = hess_arr

    cdef Py_ssize_t iq, ie, k
    cdef long long a, b, d, nmax = 0
    cdef double x, y, z, ce
    cdef double pa, pb, pd, pa1, pb1, pd1, pa2, pb2, pd2

    for ie in range(ne):
        for k in range(3):
            if e[ie, k] > nmax:
                nmax = e[ie, k]
    pow_arr = np.empty((3, nmax + 1))
    cdef double[:, ::1] pw = pow_arr

    for iq in range(q):
        x = p[iq, 0]; y = p[iq, 1]; z = p[iq, 2]
        pw[0, 0] = 1.0; pw[1, 0] = 1.0; pw[2, 0] = 1.0
        for k in range(1, nmax + 1):
            pw[0, k] = pw[0, k - 1] * x
            pw[1, k] = pw[1, k - 1] * y
            pw[2, k] = pw[2, k - 1] * z
        for ie in range(ne):
            a = e[ie, 0]; b = e[ie, 1]; d = e[ie, 2]
            ce = c[ie]
            pa = pw[0, a]; pb = pw[1, b]; pd = pw[2, d]
            pa1 = pw[0, a - 1] if a > 0 else 0.0
            pb1 = pw[1, b - 1] if b > 0 else 0.0
            pd1 = pw[2, d - 1] if d > 0 else 0.0
            pa2 = pw[0, a - 2] if a > 1 else 0.0
            pb2 = pw[1, b - 2] if b > 1 else 0.0
            pd2 = pw[2, d - 2] if d > 1 else 0.0

            val[iq] += ce * pa * pb * pd
            grad[iq, 0] += ce * a * pa1 * pb * pd
            grad[iq, 1] += ce * b * pa * pb1 * pd
            grad[iq, 2] += ce * d * pa * pb * pd1
            hess[iq, 0, 0] += ce * a * (a - 1) * pa2 * pb * pd
            hess[iq, 1, 1] += ce * b * (b - 1) * pa * pb2 * pd
            hess[iq, 2, 2] += ce * d * (d - 1) * pa * pb * pd2
            hess[iq, 0, 1] += ce * a * b * pa1 * pb1 * pd
            hess[iq, 0, 2] += ce * a * d * pa1 * pb * pd1
            hess[iq, 1, 2] += ce * b * d * pa * pb1 * pd1
        hess[iq, 1, 0] = hess[iq, 0, 1]
        hess[iq, 2, 0] = hess[iq, 0, 2]
        hess[iq, 2, 1] = hess[iq, 1, 2]
    return val_arr, grad_arr, hess_arr


def eval_radial_piecewise(r, breaks, coefs, layer_of):
    rr = np.ascontiguousarray(r, dtype=np.float64)
    cf = np.ascontiguousarray(coefs, dtype=np.float64)
    li = np.ascontiguousarray(layer_of, dtype=np.int64)

    cdef double[::1] rv = rr
    cdef double[:, ::1] cv = cf
    cdef long long[::1] lv = li
    cdef Py_ssize_t q = rv.shape[0], nc = cv.shape[1]

    f_arr = np.zeros(q)
    df_arr = np.zeros(q)
    cdef double[::1] f = f_arr
    cdef double[::1] df = df_arr

    cdef Py_ssize_t iq, k
    cdef double acc, dacc, x
    for iq in range(q):
        x = rv[iq]
        acc = 0.0; dacc = 0.0
        for k in range(nc - 1, -1, -1):
            dacc = dacc * x + acc
            acc = acc * x + cv[lv[iq], k]
        f[iq] = acc
        df[iq] = dacc
    return f_arr, df_arr
