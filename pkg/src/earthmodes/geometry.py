"""Surface calculus on spherical interfaces and quadrature construction.

Interfaces are exact concentric spheres, so the Weingarten operator is the
scalar 1/r on tangent vectors and all surface integrals use a single
product rule on S^2 (Gauss-Legendre in colatitude x uniform in longitude).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .harmonics import HarmonicTable, degree_orders, solid_harmonic


class ContractError(ValueError):
    """A documented precondition was violated."""


@dataclass(frozen=True)
class SurfacePoint:
    """Point on a sphere of given radius with outward normal and tangent frame."""

    radius: float
    unit_normal: np.ndarray
    tangent_frame: tuple[np.ndarray, np.ndarray]

    @staticmethod
    def from_position(x) -> "SurfacePoint":
        x = np.asarray(x, dtype=float)
        r = float(np.linalg.norm(x))
        if r <= 0.0:
            raise ContractError("surface point must be off-center")
        nu = x / r
        a = np.array([1.0, 0.0, 0.0]) if abs(nu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        t1 = np.cross(nu, a)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(nu, t1)
        return SurfacePoint(r, nu, (t1, t2))


def weingarten_apply(p: SurfacePoint, v) -> np.ndarray:
    """Apply the Weingarten operator W(v) = grad_v(normal) = v / r on spheres."""
    v = np.asarray(v, dtype=float)
    vn = np.linalg.norm(v)
    if vn > 0 and abs(float(v @ p.unit_normal)) > 1e-12 * vn:
        raise ContractError("weingarten_apply requires a tangent vector")
    return v / p.radius


@dataclass
class SphereRule:
    """Quadrature on S^2 exact for harmonics up to ``degree``."""

    degree: int
    directions: np.ndarray  # (n, 3) unit vectors
    weights: np.ndarray  # (n,), sums to 4*pi

    def points(self, radius: float) -> np.ndarray:
        return radius * self.directions

    def surface_weights(self, radius: float) -> np.ndarray:
        return self.weights * radius**2


def build_sphere_rule(degree: int) -> SphereRule:
    """Product rule: (degree+2) Gauss-Legendre colatitudes x (2*degree+4) longitudes."""
    if degree < 1:
        raise ValueError("spherical degree must be >= 1")
    nth = degree + 2
    nph = 2 * degree + 4
    x, w = leggauss(nth)
    phis = 2.0 * math.pi * np.arange(nph) / nph
    st = np.sqrt(1.0 - x**2)
    dirs = np.empty((nth * nph, 3))
    wts = np.empty(nth * nph)
    idx = 0
    for i in range(nth):
        for p in phis:
            dirs[idx] = (st[i] * math.cos(p), st[i] * math.sin(p), x[i])
            wts[idx] = w[i] * 2.0 * math.pi / nph
            idx += 1
    return SphereRule(degree, dirs, wts)


@dataclass
class QuadratureRule:
    """Per-layer radial Gauss-Legendre nodes x one spherical rule."""

    radial_order: int
    spherical_degree: int
    layer_breaks: np.ndarray  # (n_layers + 1,)
    radial_nodes: list[np.ndarray] = field(repr=False)
    radial_weights: list[np.ndarray] = field(repr=False)
    sphere: SphereRule = field(repr=False, default=None)

    node_cap: int = 2_000_000

    @property
    def n_layers(self) -> int:
        return len(self.radial_nodes)

    def layer_nodes(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.radial_nodes[k], self.radial_weights[k]

    def all_radial(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Concatenated nodes, weights and layer indices."""
        r = np.concatenate(self.radial_nodes)
        w = np.concatenate(self.radial_weights)
        lid = np.concatenate(
            [np.full(len(n), k, dtype=np.int64) for k, n in enumerate(self.radial_nodes)]
        )
        return r, w, lid


def build_quadrature(
    layer_breaks,
    radial_order: int,
    spherical_degree: int,
    node_cap: int = 2_000_000,
    segment_breaks: dict | None = None,
) -> QuadratureRule:
    """Gauss-Legendre radial rule per layer plus a spherical product rule.

    ``segment_breaks`` maps layer index to interior radii at which the layer's
    rule is split into separate Gauss panels (needed to resolve features much
    narrower than the layer, e.g. cutoff ramps).  Exactness: per-panel
    polynomials of degree <= 2*radial_order - 1 in r; spherical harmonics up
    to ``spherical_degree``.
    """
    if radial_order < 1 or spherical_degree < 1:
        raise ValueError("quadrature orders must be >= 1")
    breaks = np.asarray(layer_breaks, dtype=float)
    sphere = build_sphere_rule(spherical_degree)
    segment_breaks = segment_breaks or {}
    x, w = leggauss(radial_order)
    nodes, wts = [], []
    total = 0
    for k, (a, b) in enumerate(zip(breaks[:-1], breaks[1:])):
        cuts = [a] + sorted(r for r in segment_breaks.get(k, ()) if a < r < b) + [b]
        ns, ws = [], []
        for aa, bb in zip(cuts[:-1], cuts[1:]):
            mid, half = 0.5 * (aa + bb), 0.5 * (bb - aa)
            ns.append(mid + half * x)
            ws.append(half * w)
        nodes.append(np.concatenate(ns))
        wts.append(np.concatenate(ws))
        total += len(nodes[-1]) * len(sphere.weights)
    if total > node_cap:
        raise MemoryError(f"quadrature would need {total} nodes (cap {node_cap})")
    return QuadratureRule(radial_order, spherical_degree, breaks, nodes, wts, sphere, node_cap)


# -- spherical-harmonic transforms on a rule's grid ---------------------------


class SphereTransform:
    """Forward/backward real-harmonic transforms on one SphereRule grid."""

    def __init__(self, rule: SphereRule, lmax: int):
        if lmax > rule.degree:
            raise ValueError("transform band limit exceeds rule exactness")
        self.rule = rule
        self.lmax = lmax
        self.pairs = degree_orders(lmax)
        pts = rule.directions
        self.Y = np.empty((len(self.pairs), len(pts)))
        self.gradY = np.empty((len(self.pairs), len(pts), 3))
        for i, (l, m) in enumerate(self.pairs):
            tab = HarmonicTable(solid_harmonic(l, m), pts)
            self.Y[i] = tab.Y
            self.gradY[i] = tab.gradY  # on unit sphere; scales as 1/r

    def analyze(self, samples: np.ndarray) -> np.ndarray:
        """Coefficients of a scalar sampled on the grid (band-limited assumption)."""
        return self.Y @ (self.rule.weights * samples)

    def synthesize(self, coefs: np.ndarray) -> np.ndarray:
        return coefs @ self.Y

    def alias_residual(self, samples: np.ndarray) -> float:
        """Relative reconstruction mismatch; > tol indicates aliasing."""
        rec = self.synthesize(self.analyze(samples))
        scale = float(np.max(np.abs(samples))) or 1.0
        return float(np.max(np.abs(rec - samples))) / scale


def surface_gradient(samples: np.ndarray, radius: float, transform: SphereTransform):
    """Tangential gradient of a scalar sampled on the sphere grid.

    Returns (grid samples of grad^S f as (n,3), metadata dict). Exact for
    band-limited input; aliasing is reported, not raised.
    """
    coefs = transform.analyze(samples)
    grad = np.einsum("c,cnd->nd", coefs, transform.gradY) / radius
    meta = {"alias_residual": transform.alias_residual(samples)}
    return grad, meta


def surface_divergence(samples_vec: np.ndarray, radius: float, transform: SphereTransform):
    """Tangential divergence of a tangent field sampled on the sphere grid.

    Projects onto the tangential vector harmonics; div^S of the toroidal part
    vanishes identically.
    """
    w = transform.rule.weights
    out = np.zeros(samples_vec.shape[0])
    alias = 0.0
    rec = np.zeros_like(samples_vec)
    for i, (l, m) in enumerate(transform.pairs):
        if l == 0:
            continue
        k2 = l * (l + 1)
        b = transform.gradY[i]  # ~ grad^S Y at r=1
        coef_b = np.einsum("n,nd,nd->", w, samples_vec, b) / k2
        c = np.cross(transform.rule.directions, b)
        coef_c = np.einsum("n,nd,nd->", w, samples_vec, c) / k2
        rec += coef_b * b + coef_c * c
        # the basis field b(x) = [grad Y](unit dir) equals r grad Y(x) on the
        # radius-r sphere, whose surface divergence is -l(l+1) Y / r
        out += -coef_b * k2 / radius * transform.Y[i]
    scale = float(np.max(np.abs(samples_vec))) or 1.0
    alias = float(np.max(np.abs(rec - samples_vec))) / scale
    return out, {"alias_residual": alias}


def divergence_identity_residual(field, radius: float, transform: SphereTransform) -> float:
    """Max-norm residual of the ambient/tangential divergence identity

        div u = div^S(u - (u.nu)nu) + nu . grad u . nu + (c1 + c2)(u.nu)

    with c1 = c2 = 1/r on a radius-r sphere.  ``field(points)`` must return
    (values (n,3), gradients (n,3,3)) with gradient convention G[i,j] = d_i u_j.
    """
    pts = transform.rule.points(radius)
    nu = transform.rule.directions
    vals, grads = field(pts)
    div = np.trace(grads, axis1=1, axis2=2)
    un = np.einsum("nd,nd->n", vals, nu)
    tang = vals - un[:, None] * nu
    div_tang, _ = surface_divergence(tang, radius, transform)
    nugradnu = np.einsum("ni,nij,nj->n", nu, grads, nu)
    resid = div - div_tang - nugradnu - (2.0 / radius) * un
    return float(np.max(np.abs(resid)))


def rule_certificates(quad: QuadratureRule) -> dict:
    """Exactness certificates: per-layer radial moment and Y orthonormality."""
    out = {}
    worst = 0.0
    for k in range(quad.n_layers):
        r, w = quad.layer_nodes(k)
        a, b = quad.layer_breaks[k], quad.layer_breaks[k + 1]
        got = float(np.sum(w * r**2))
        want = (b**3 - a**3) / 3.0
        worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
    out["radial_moment_error"] = worst
    lmax = quad.spherical_degree
    tr = SphereTransform(quad.sphere, min(lmax, 8))
    G = np.einsum("cn,n,dn->cd", tr.Y, quad.sphere.weights, tr.Y)
    out["orthonormality_error"] = float(np.max(np.abs(G - np.eye(G.shape[0]))))
    return out
