"""Compare the compiled evaluation core against the pure-NumPy fallback.

Run:  python benchmarks/bench_kernels.py [n_points]

The monomial-table kernel dominates basis tabulation on quadrature grids
(values + gradients + Hessians of solid harmonics at every node), and the
piecewise-polynomial kernel dominates radial-shape evaluation.
"""

import sys
import time

import numpy as np

from earthmodes import _poly_core_py
from earthmodes.harmonics import solid_harmonic

try:
    from earthmodes import _poly_core

    BACKENDS = [("cython", _poly_core), ("numpy", _poly_core_py)]
except ImportError:
    print("compiled core unavailable; benchmarking the NumPy path only")
    BACKENDS = [("numpy", _poly_core_py)]


def bench_monomials(impl, pts, reps=5):
    tabs = [solid_harmonic(l, m) for l in range(0, 7) for m in range(-l, l + 1)]
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        for sh in tabs:
            impl.eval_monomial_table(pts, sh.exponents, sh.coefficients)
        best = min(best, time.perf_counter() - t0)
    return best, len(tabs)


def bench_radial(impl, n, reps=5):
    rng = np.random.default_rng(0)
    r = rng.uniform(0.1, 1.0, n)
    coefs = rng.standard_normal((3, 9))
    lid = rng.integers(0, 3, n)
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        for _ in range(50):
            impl.eval_radial_piecewise(r, None, coefs, lid)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(n, 3))
    print(f"{n} evaluation points\n")
    print(f"{'backend':<8} {'monomial tables':>18} {'radial piecewise':>18}")
    rows = {}
    for name, impl in BACKENDS:
        tm, ntab = bench_monomials(impl, pts)
        tr = bench_radial(impl, n)
        rows[name] = (tm, tr)
        print(f"{name:<8} {tm * 1e3:>14.1f} ms {tr * 1e3:>14.1f} ms")
    if len(rows) == 2:
        sm = rows["numpy"][0] / rows["cython"][0]
        sr = rows["numpy"][1] / rows["cython"][1]
        print(f"\nspeedup (numpy/cython): monomials x{sm:.2f}, radial x{sr:.2f}")
    # agreement check
    sh = solid_harmonic(4, -2)
    outs = [impl.eval_monomial_table(pts[:100], sh.exponents, sh.coefficients) for _, impl in BACKENDS]
    if len(outs) == 2:
        worst = max(float(np.max(np.abs(a - b))) for a, b in zip(outs[0], outs[1]))
        print(f"backend agreement: {worst:.2e}")


if __name__ == "__main__":
    main()
