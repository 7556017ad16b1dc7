"""Pure-NumPy evaluation core for Cartesian monomial tables.

Mirrors the API of the compiled ``_poly_core`` extension; selected as a
fallback when the extension is unavailable (or forced via
``EARTHMODES_FORCE_PY=1``).
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def eval_monomial_table(points, exponents, coefficients):
    """Evaluate p(x) = sum_e c_e x^a y^b z^c with gradient and Hessian.

    points: (Q, 3) float, exponents: (E, 3) int, coefficients: (E,).
    Returns (val (Q,), grad (Q, 3), hess (Q, 3, 3)).
    """
    pts = np.asarray(points, dtype=float)
    exps = np.asarray(exponents, dtype=np.int64)
    coef = np.asarray(coefficients, dtype=float)
    q = pts.shape[0]
    nmax = int(exps.max()) if exps.size else 0

    # power tables: pw[d][:, n] = coordinate_d ^ n
    pw = []
    for d in range(3):
        t = np.ones((q, nmax + 1))
        for n in range(1, nmax + 1):
            t[:, n] = t[:, n - 1] * pts[:, d]
        pw.append(t)

    a, b, c = exps[:, 0], exps[:, 1], exps[:, 2]
    base = pw[0][:, a] * pw[1][:, b] * pw[2][:, c]  # (Q, E)
    val = base @ coef

    grad = np.empty((q, 3))
    low = [np.maximum(e - 1, 0) for e in (a, b, c)]
    tx = pw[0][:, low[0]] * pw[1][:, b] * pw[2][:, c]
    ty = pw[0][:, a] * pw[1][:, low[1]] * pw[2][:, c]
    tz = pw[0][:, a] * pw[1][:, b] * pw[2][:, low[2]]
    grad[:, 0] = tx @ (coef * a)
    grad[:, 1] = ty @ (coef * b)
    grad[:, 2] = tz @ (coef * c)

    hess = np.empty((q, 3, 3))
    ee = (a, b, c)
    for i in range(3):
        for j in range(i, 3):
            ex = [a.copy(), b.copy(), c.copy()]
            w = coef * ee[i]
            ex[i] = ex[i] - 1
            w = w * ex[j]
            ex[j] = ex[j] - 1
            ok = ex[i] >= 0
            ex = [np.maximum(e, 0) for e in ex]
            t = pw[0][:, ex[0]] * pw[1][:, ex[1]] * pw[2][:, ex[2]]
            hess[:, i, j] = t @ np.where(ok, w, 0.0)
            hess[:, j, i] = hess[:, i, j]
    return val, grad, hess


def eval_radial_piecewise(r, breaks, coefs, layer_of):
    """Evaluate per-layer polynomials and derivatives at radii r.

    breaks: layer boundaries (n+1,); coefs: (n_layers, deg+1) low-to-high;
    layer_of: (Q,) layer index per radius.  Returns (f, df).
    """
    rr = np.asarray(r, dtype=float)
    cf = np.asarray(coefs, dtype=float)
    li = np.asarray(layer_of, dtype=np.int64)
    deg = cf.shape[1] - 1
    f = np.zeros_like(rr)
    df = np.zeros_like(rr)
    for k in range(deg, -1, -1):
        df = df * rr + f
        f = f * rr + cf[li, k]
    return f, df
