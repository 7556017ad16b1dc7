"""Real spherical harmonics and their vector extensions on concentric spheres.

Each harmonic is represented by the exact Cartesian monomial expansion of the
real solid harmonic ``R_lm(x) = r^l Y_lm(x/r)``, so values, gradients and
Hessians are evaluated without trigonometry.  ``Y_lm`` are orthonormal on the
unit sphere:

    m = 0 :  N * P_l(cos t)
    m > 0 :  sqrt(2) * N * P_l^m(cos t) * cos(m p)
    m < 0 :  sqrt(2) * N * P_l^|m|(cos t) * sin(|m| p)

with N^2 = (2l+1)(l-|m|)! / (4 pi (l+|m|)!) and no Condon-Shortley phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .kernels import eval_monomial_table


@dataclass(frozen=True)
class SolidHarmonic:
    """Monomial table of one real solid harmonic r^l Y_lm."""

    degree: int
    order: int
    exponents: np.ndarray  # (n_mono, 3) int
    coefficients: np.ndarray  # (n_mono,) float

    @property
    def k(self) -> float:
        """sqrt(l(l+1)), the tangential normalization factor."""
        return math.sqrt(self.degree * (self.degree + 1))


def _legendre_coeffs(l: int) -> np.ndarray:
    """Coefficients of P_l in the monomial basis of cos(theta)."""
    c = np.zeros(l + 1)
    c[l] = 1.0
    return np.polynomial.legendre.leg2poly(c)


def _poly_derivative(c: np.ndarray, m: int) -> np.ndarray:
    for _ in range(m):
        c = np.polynomial.polynomial.polyder(c)
    return c


def _expand_xy_power(m: int) -> tuple[list[tuple[int, int]], list[float], list[float]]:
    """Real/imaginary monomial parts of (x + i y)^m."""
    terms = []
    re, im = [], []
    for j in range(m + 1):
        b = math.comb(m, j)
        # i^j cycle: 1, i, -1, -i
        phase = j % 4
        terms.append((m - j, j))
        re.append(b * (1.0 if phase == 0 else -1.0 if phase == 2 else 0.0))
        im.append(b * (1.0 if phase == 1 else -1.0 if phase == 3 else 0.0))
    return terms, re, im


@lru_cache(maxsize=None)
def solid_harmonic(l: int, m: int) -> SolidHarmonic:
    """Monomial table of the real solid harmonic r^l Y_lm, |m| <= l."""
    if not 0 <= abs(m) <= l:
        raise ValueError(f"invalid harmonic indices (l={l}, m={m})")
    am = abs(m)
    norm = math.sqrt((2 * l + 1) * math.factorial(l - am) / (4.0 * math.pi * math.factorial(l + am)))
    if m != 0:
        norm *= math.sqrt(2.0)

    # r^l P_l^|m|(z/r) e^{i|m| phi} sin^|m| = (x+iy)^|m| * r^(l-|m|) * d^|m|P_l(z/r)
    dP = _poly_derivative(_legendre_coeffs(l), am)  # degree l - am polynomial in c = z/r
    # r^(l-am) * dP(z/r) = sum_k dP[k] z^k r^(l-am-k); parity makes l-am-k even.
    zr_terms: dict[tuple[int, int], float] = {}  # (z_power, r2_power) -> coeff
    for k, ck in enumerate(dP):
        if ck == 0.0:
            continue
        res = l - am - k
        if res % 2 != 0:
            raise AssertionError("Legendre parity violated")
        zr_terms[(k, res // 2)] = float(ck)

    xy_terms, re_c, im_c = _expand_xy_power(am)
    use = im_c if m < 0 else re_c

    mono: dict[tuple[int, int, int], float] = {}
    for (zp, r2p), czr in zr_terms.items():
        # expand (x^2+y^2+z^2)^r2p
        for ex in range(r2p + 1):
            for ey in range(r2p - ex + 1):
                ez = r2p - ex - ey
                mult = math.factorial(r2p) / (math.factorial(ex) * math.factorial(ey) * math.factorial(ez))
                for (xp, yp), cxy in zip(xy_terms, use):
                    if cxy == 0.0:
                        continue
                    key = (xp + 2 * ex, yp + 2 * ey, zp + 2 * ez)
                    mono[key] = mono.get(key, 0.0) + czr * mult * cxy * norm
    keys = sorted(k for k, v in mono.items() if v != 0.0)
    if not keys:  # l = m = 0
        keys = [(0, 0, 0)]
        mono[(0, 0, 0)] = norm
    exps = np.array(keys, dtype=np.int64)
    coefs = np.array([mono[k] for k in keys])
    return SolidHarmonic(l, m, exps, coefs)


def degree_orders(lmax: int) -> list[tuple[int, int]]:
    """All (l, m) pairs with l <= lmax, ordered by (l, m)."""
    return [(l, m) for l in range(lmax + 1) for m in range(-l, l + 1)]


class HarmonicTable:
    """Values, surface gradients and ambient Hessians of Y_lm at given points.

    ``Y`` denotes the degree-zero homogeneous extension Y(x) = R(x)/r^l, whose
    ambient gradient is automatically tangent to spheres.  All arrays are
    indexed by point.
    """

    def __init__(self, sh: SolidHarmonic, points: np.ndarray):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r2 = np.einsum("ij,ij->i", pts, pts)
        if np.any(r2 <= 0.0):
            raise ValueError("harmonic evaluation requires r > 0")
        l = sh.degree
        R, dR, HR = eval_monomial_table(pts, sh.exponents, sh.coefficients)
        rml = r2 ** (-0.5 * l)
        self.Y = R * rml
        # grad(R r^-l) = r^-l dR - l R r^(-l-2) x
        self.gradY = rml[:, None] * dR - (l * R * rml / r2)[:, None] * pts
        # Hessian of the 0-homogeneous extension
        xi = pts[:, :, None] * dR[:, None, :]
        sym = xi + np.swapaxes(xi, 1, 2)
        eye = np.eye(3)[None, :, :]
        self.hessY = (
            rml[:, None, None] * HR
            - (l * rml / r2)[:, None, None] * (sym + R[:, None, None] * eye)
            + (l * (l + 2) * R * rml / r2**2)[:, None, None] * pts[:, :, None] * pts[:, None, :]
        )


def radial_unit(points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    return pts / r[:, None]


def vector_harmonic(sh: SolidHarmonic, family: str, points: np.ndarray) -> np.ndarray:
    """Angular factor of the vector harmonic at unit-scale: the field equals
    ``f(r) * vector_harmonic`` for the radial profile f.

    family 'radial':      Y * rhat
    family 'tangential':  (r grad Y) / k
    family 'toroidal':    (x cross grad Y) / k
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tab = HarmonicTable(sh, pts)
    r = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    if family == "radial":
        return tab.Y[:, None] * (pts / r[:, None])
    if sh.degree == 0:
        raise ValueError("tangential/toroidal harmonics need l >= 1")
    if family == "tangential":
        return r[:, None] * tab.gradY / sh.k
    if family == "toroidal":
        return np.cross(pts, tab.gradY) / sh.k
    raise ValueError(f"unknown family {family!r}")
