"""Layered spherically symmetric planet models and their hydrostatic
reference states.

Material coefficients are per-layer radial polynomials (low-to-high degree).
The reference state carries per-layer Chebyshev-Lobatto tables of the
gravitational potential, radial gravity, pressure, the fluid-extension stress
scalar and the stratification diagnostic, each with a barycentric
interpolant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import polynomial as P


class ModelInvalidError(ValueError):
    pass


class DomainError(ValueError):
    pass


class SingularityError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Layer:
    kind: str  # 'solid' | 'fluid'
    r_in: float
    r_out: float
    rho: tuple  # polynomial coefficients, low -> high
    kappa: tuple = ()
    mu: tuple = ()
    gamma: tuple = ()  # fluid layers: dimensionless adiabatic index

    def rho_at(self, r):
        return P.polyval(r, np.asarray(self.rho, dtype=float))

    def kappa_at(self, r):
        return P.polyval(r, np.asarray(self.kappa or (0.0,), dtype=float))

    def mu_at(self, r):
        return P.polyval(r, np.asarray(self.mu or (0.0,), dtype=float))

    def gamma_at(self, r):
        return P.polyval(r, np.asarray(self.gamma or (0.0,), dtype=float))


@dataclass(frozen=True)
class Interface:
    """Internal interface (or outer boundary when ``outer`` is None).

    ``inner``/``outer`` index the adjacent layers.  For the weak-form
    bookkeeping, across fluid-solid interfaces the minus side is the fluid
    and the unit normal points from fluid to solid (nu_sign * rhat).
    """

    radius: float
    kind: str  # 'SS' | 'FF' | 'FS' | 'SURF_S' | 'SURF_F'
    inner: int
    outer: int | None
    minus: int  # layer index of the minus side (for SURF_*: the interior)
    plus: int | None
    nu_sign: float  # +1 if form normal is +rhat, else -1

    @property
    def is_fluid_interface(self) -> bool:
        return self.kind in ("FF", "FS")


@dataclass(frozen=True)
class EarthModel:
    layers: tuple[Layer, ...]
    omega: tuple = (0.0, 0.0, 0.0)
    grav_const: float = 1.0
    nondimensionalize: bool = False

    def __post_init__(self):
        validate_model(self)

    # -- geometry ------------------------------------------------------------

    @property
    def radius(self) -> float:
        return self.layers[-1].r_out

    @property
    def layer_breaks(self) -> np.ndarray:
        return np.array([0.0] + [l.r_out for l in self.layers])

    def layer_of(self, r: float, side: str = "-") -> int:
        """Index of the layer containing r; ``side`` resolves interface radii."""
        breaks = self.layer_breaks
        if r < 0 or r > self.radius + 1e-12 * self.radius:
            raise DomainError(f"radius {r} outside model")
        for k, l in enumerate(self.layers):
            if l.r_in < r < l.r_out:
                return k
        hits = np.where(np.isclose(breaks, r, rtol=0, atol=1e-12 * self.radius))[0]
        if len(hits):
            j = int(hits[0])
            if j == 0:
                return 0
            if side == "-":
                return min(j - 1, len(self.layers) - 1)
            return min(j, len(self.layers) - 1)
        return int(np.searchsorted(breaks, r) - 1)

    @property
    def interfaces(self) -> tuple[Interface, ...]:
        out = []
        for i in range(len(self.layers) - 1):
            a, b = self.layers[i], self.layers[i + 1]
            r = a.r_out
            if a.kind == b.kind:
                kind = "SS" if a.kind == "solid" else "FF"
                out.append(Interface(r, kind, i, i + 1, i, i + 1, +1.0))
            elif a.kind == "fluid":  # solid above fluid: nu = +rhat (fluid -> solid)
                out.append(Interface(r, "FS", i, i + 1, i, i + 1, +1.0))
            else:  # fluid above solid: nu = -rhat (fluid -> solid)
                out.append(Interface(r, "FS", i, i + 1, i + 1, i, -1.0))
        last = len(self.layers) - 1
        kind = "SURF_S" if self.layers[last].kind == "solid" else "SURF_F"
        out.append(Interface(self.radius, kind, last, None, last, None, +1.0))
        return tuple(out)

    def solid_runs(self) -> list[list[int]]:
        """Maximal sequences of contiguous solid layers."""
        runs, cur = [], []
        for k, l in enumerate(self.layers):
            if l.kind == "solid":
                cur.append(k)
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        return runs


def validate_model(model: EarthModel) -> None:
    if not model.layers:
        raise ModelInvalidError("model needs at least one layer")
    prev = 0.0
    for k, l in enumerate(model.layers):
        if l.kind not in ("solid", "fluid"):
            raise ModelInvalidError(f"layer {k}: unknown kind {l.kind!r}")
        if not math.isclose(l.r_in, prev, rel_tol=0, abs_tol=1e-12):
            raise ModelInvalidError(f"layer {k}: r_in {l.r_in} != previous r_out {prev}")
        if l.r_out <= l.r_in:
            raise ModelInvalidError(f"layer {k}: radii not increasing")
        prev = l.r_out
        rs = np.linspace(l.r_in, l.r_out, 33)
        if np.min(l.rho_at(rs)) <= 0.0:
            raise ModelInvalidError(f"layer {k}: density must be positive")
        if l.kind == "fluid":
            if any(c != 0.0 for c in (l.mu or ())):
                raise ModelInvalidError(f"layer {k}: fluid layers require mu == 0")
            if not l.gamma or np.min(l.gamma_at(rs)) <= 0.0:
                raise ModelInvalidError(f"layer {k}: fluid layers need gamma > 0")
            if l.kappa and np.min(l.kappa_at(rs)) <= 0.0:
                raise ModelInvalidError(f"layer {k}: kappa must be positive where given")
        else:
            if np.min(l.mu_at(rs)) < 0.0:
                raise ModelInvalidError(f"layer {k}: mu must be >= 0")
            if not l.kappa or np.min(l.kappa_at(rs)) <= 0.0:
                raise ModelInvalidError(f"layer {k}: solid layers need kappa > 0")


@dataclass(frozen=True)
class Scales:
    """Nondimensionalization scales (length, density, time; derived units)."""

    length: float
    density: float
    time: float

    @property
    def pressure(self) -> float:
        return self.density * self.length**2 / self.time**2

    @property
    def gravity(self) -> float:
        return self.length / self.time**2

    @property
    def potential(self) -> float:
        return self.length**2 / self.time**2


def to_nondimensional(model: EarthModel) -> tuple[EarthModel, Scales]:
    """Rescale to R = 1, mean density = 1, G = 1."""
    R = model.radius
    vol = 4.0 / 3.0 * math.pi * R**3
    mass = 0.0
    for l in model.layers:
        integ = P.polyint(P.polymul(np.asarray(l.rho, dtype=float), [0.0, 0.0, 1.0]))
        mass += 4.0 * math.pi * (P.polyval(l.r_out, integ) - P.polyval(l.r_in, integ))
    D = mass / vol
    if model.grav_const <= 0:
        raise ModelInvalidError("nondimensionalization needs G > 0")
    T = 1.0 / math.sqrt(model.grav_const * D)
    sc = Scales(R, D, T)

    def poly_rescale(coefs, unit):
        # p(r) in SI -> phat(rhat) = p(rhat * R)/unit
        c = np.asarray(coefs, dtype=float)
        return tuple(c[n] * R**n / unit for n in range(len(c)))

    layers = tuple(
        replace(
            l,
            r_in=l.r_in / R,
            r_out=l.r_out / R,
            rho=poly_rescale(l.rho, D),
            kappa=poly_rescale(l.kappa, sc.pressure) if l.kappa else (),
            mu=poly_rescale(l.mu, sc.pressure) if l.mu else (),
            gamma=poly_rescale(l.gamma, 1.0) if l.gamma else (),
        )
        for l in model.layers
    )
    omega = tuple(o * T for o in model.omega)
    return EarthModel(layers, omega, grav_const=1.0, nondimensionalize=False), sc


# -- reference state -----------------------------------------------------------


def _cheb_lobatto(a: float, b: float, n: int) -> np.ndarray:
    x = np.cos(np.pi * np.arange(n) / (n - 1))[::-1]
    return 0.5 * (a + b) + 0.5 * (b - a) * x


def _bary_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[1::2] = -1.0
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


class LayerTable:
    """Barycentric interpolant of node values on one layer's Lobatto grid."""

    def __init__(self, nodes: np.ndarray, values: np.ndarray):
        self.nodes = nodes
        self.values = np.asarray(values, dtype=float)
        self.w = _bary_weights(len(nodes))

    def __call__(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        for i, ri in enumerate(r):
            d = ri - self.nodes
            hit = np.where(np.abs(d) < 1e-14 * (abs(ri) + 1))[0]
            if len(hit):
                out[i] = self.values[hit[0]]
            else:
                q = self.w / d
                out[i] = np.sum(q * self.values) / np.sum(q)
        return out if out.size > 1 else float(out[0])

    def derivative_values(self) -> np.ndarray:
        """Derivative at the nodes via the barycentric differentiation matrix."""
        x, w, n = self.nodes, self.w, len(self.nodes)
        D = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i != j:
                    D[i, j] = (w[j] / w[i]) / (x[i] - x[j])
            D[i, i] = -np.sum(D[i, :])
        return D @ self.values


@dataclass
class SigmaRamp:
    """Support of the fluid-pressure extension in one solid layer."""

    layer: int
    interface_radius: float
    direction: float  # +1: ramp extends outward into the solid; -1: inward
    thickness: float
    amplitude: float  # -p0 at the interface


def _smooth5(s):
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - (10.0 * s**3 - 15.0 * s**4 + 6.0 * s**5)


def _smooth5_d(s):
    inside = (s > 0.0) & (s < 1.0)
    return np.where(inside, -(30.0 * s**2 - 60.0 * s**3 + 30.0 * s**4), 0.0)


@dataclass
class ReferenceState:
    model: EarthModel
    resolution: int
    nodes: list[np.ndarray]
    phi0: list[LayerTable]
    g0: list[LayerTable]
    p0: list[LayerTable]
    n2: list[np.ndarray]  # nodal N^2 on fluid layers (nan elsewhere / singular)
    ramps: list[SigmaRamp]
    include_centrifugal: bool
    warnings: list[str] = field(default_factory=list)
    equilibrium_residuals: dict = field(default_factory=dict)
    tau0: object = None  # optional deviatoric prestress, stability reports only

    # -- pointwise evaluation --------------------------------------------------
    # Array arguments must lie within a single layer.

    def _lay(self, r, side="-"):
        r = np.asarray(r, dtype=float)
        rep = float(r) if r.ndim == 0 else float(np.median(r))
        return self.model.layer_of(rep, side)

    def phi0_at(self, r, side="-"):
        return self.phi0[self._lay(r, side)](r)

    def g0_at(self, r, side="-"):
        return self.g0[self._lay(r, side)](r)

    def p0_at(self, r, side="-"):
        return self.p0[self._lay(r, side)](r)

    def g0_deriv_at(self, r, side="-"):
        """d(g0)/dr from the radial Poisson equation (plus centrifugal term)."""
        k = self._lay(r, side)
        rho = self.model.layers[k].rho_at(r)
        G = self.model.grav_const
        rsafe = np.maximum(np.asarray(r, dtype=float), 1e-300)
        g = self.g0_at(r, side)
        if self.include_centrifugal:
            om2 = float(np.dot(self.model.omega, self.model.omega))
            grav_part = g + (2.0 / 3.0) * om2 * rsafe
            return 4.0 * math.pi * G * rho - 2.0 * grav_part / rsafe - (2.0 / 3.0) * om2
        return 4.0 * math.pi * G * rho - 2.0 * g / rsafe

    def sigma_at(self, r, side="-"):
        """Stress extension scalar: -p0 on fluids, quintic ramp into solids."""
        k = self._lay(r, side)
        if self.model.layers[k].kind == "fluid":
            return -self.p0_at(r, side)
        val = 0.0
        for ramp in self.ramps:
            if ramp.layer != k:
                continue
            s = ramp.direction * (np.asarray(r) - ramp.interface_radius) / ramp.thickness
            val = val + ramp.amplitude * _smooth5(s)
        return val if np.ndim(r) else float(val)

    def sigma_deriv_at(self, r, side="-"):
        k = self._lay(r, side)
        if self.model.layers[k].kind == "fluid":
            return self.model.layers[k].rho_at(r) * self.g0_at(r, side)  # -dp0/dr
        val = 0.0
        for ramp in self.ramps:
            if ramp.layer != k:
                continue
            s = ramp.direction * (np.asarray(r) - ramp.interface_radius) / ramp.thickness
            val = val + ramp.amplitude * _smooth5_d(s) * ramp.direction / ramp.thickness
        return val if np.ndim(r) else float(val)

    def stilde_at(self, r, p_floor=1e-10):
        """Radial component of the stratification vector in a fluid layer."""
        k = self._lay(r)
        lay = self.model.layers[k]
        if lay.kind != "fluid":
            raise DomainError("stratification vector is defined in fluid layers")
        rho = lay.rho_at(r)
        drho = P.polyval(r, P.polyder(np.asarray(lay.rho, dtype=float)))
        g = self.g0_at(r)
        pg = self.p0_at(r) * lay.gamma_at(r)
        if abs(pg) <= p_floor * self.pressure_scale:
            raise SingularityError(f"p0*gamma vanishes at r={r}")
        return drho + g * rho**2 / pg

    @property
    def pressure_scale(self) -> float:
        return max(float(t.values.max()) for t in self.p0) or 1.0


def build_reference_state(
    model: EarthModel,
    radial_resolution: int = 96,
    include_centrifugal: bool = False,
    sigma_thickness_factor: float = 0.05,
) -> ReferenceState:
    """Solve the radially reduced equilibrium for the prestressed state.

    g0 comes from the enclosed mass (exact for polynomial densities), the
    potential and pressure from composite 2-point Gauss accumulation on the
    Lobatto grid, inward from p0(R) = 0.
    """
    if radial_resolution < 16:
        raise ModelInvalidError("radial_resolution must be >= 16 nodes/layer")
    G = model.grav_const
    warnings = []
    om2 = float(np.dot(model.omega, model.omega))
    if include_centrifugal and om2 > 0.0:
        warnings.append(
            "centrifugal flattening neglected: spherically averaged term used; "
            f"asphericity residual ~ {2.0 / 3.0 * om2 * model.radius:.3e} in gravity units"
        )

    # enclosed mass, exact per layer
    mass_polys, mass_consts = [], []
    m_acc = 0.0
    for l in model.layers:
        integ = P.polyint(P.polymul(np.asarray(l.rho, dtype=float), [0.0, 0.0, 1.0]))
        mass_polys.append(integ)
        mass_consts.append(m_acc - P.polyval(l.r_in, integ))
        m_acc = m_acc + P.polyval(l.r_out, integ) - P.polyval(l.r_in, integ)
    m_total = 4.0 * math.pi * m_acc

    def mass_at(r, k):
        return 4.0 * math.pi * (P.polyval(r, mass_polys[k]) + mass_consts[k])

    tiny = 1e-30 * model.radius

    def g_at(r, k):
        r = np.asarray(r, dtype=float)
        rs = np.maximum(r, tiny)
        g = np.where(r > tiny, G * mass_at(rs, k) / rs**2, 0.0)
        if include_centrifugal:
            g = g - (2.0 / 3.0) * om2 * r
        return g

    nodes = [
        _cheb_lobatto(l.r_in, l.r_out, radial_resolution) for l in model.layers
    ]

    # p0 and phi0 by composite 2-pt Gauss between adjacent nodes, from outside in
    gx = np.array([-1.0, 1.0]) / math.sqrt(3.0)
    p_tabs, phi_tabs, g_tabs = [], [], []
    p_right = 0.0
    phi_right = -G * m_total / model.radius
    for k in reversed(range(len(model.layers))):
        l = model.layers[k]
        xs = nodes[k]
        pv = np.empty_like(xs)
        fv = np.empty_like(xs)
        pv[-1], fv[-1] = p_right, phi_right
        for j in range(len(xs) - 2, -1, -1):
            a, b = xs[j], xs[j + 1]
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            rq = mid + half * gx
            gq = g_at(rq, k)
            pv[j] = pv[j + 1] + half * np.sum(l.rho_at(rq) * gq)
            fv[j] = fv[j + 1] - half * np.sum(gq)
        p_right = pv[0]
        phi_right = fv[0]
        p_tabs.append(LayerTable(xs, pv))
        phi_tabs.append(LayerTable(xs, fv))
        g_tabs.append(LayerTable(xs, g_at(xs, k)))
    p_tabs.reverse()
    phi_tabs.reverse()
    g_tabs.reverse()

    # stratification diagnostic per fluid layer
    n2 = []
    for k, l in enumerate(model.layers):
        if l.kind != "fluid":
            n2.append(np.full(radial_resolution, np.nan))
            continue
        xs = nodes[k]
        rho = l.rho_at(xs)
        drho = P.polyval(xs, P.polyder(np.asarray(l.rho, dtype=float)))
        g = g_tabs[k](xs)
        pg = p_tabs[k](xs) * l.gamma_at(xs)
        with np.errstate(divide="ignore", invalid="ignore"):
            st = drho + g * rho**2 / pg
            n2.append(np.where(np.abs(pg) > 0, -g * st / rho, np.nan))

    # fluid-pressure extension ramps into adjacent solid layers
    ramps = []
    for itf in model.interfaces:
        if itf.kind != "FS":
            continue
        solid = itf.plus
        lay = model.layers[solid]
        thick = sigma_thickness_factor * (lay.r_out - lay.r_in)
        direction = +1.0 if lay.r_in == itf.radius else -1.0
        # keep support away from any solid-solid interface of this layer
        for other in model.interfaces:
            if other.kind == "SS" and solid in (other.inner, other.outer):
                gap = abs(other.radius - itf.radius)
                if thick > 0.45 * gap:
                    thick = 0.45 * gap
                    warnings.append(f"sigma ramp clamped to {thick:.3e} at r={itf.radius}")
        amp = -float(p_tabs[itf.minus](itf.radius))
        ramps.append(SigmaRamp(solid, itf.radius, direction, thick, amp))

    state = ReferenceState(
        model,
        radial_resolution,
        nodes,
        phi_tabs,
        g_tabs,
        p_tabs,
        n2,
        ramps,
        include_centrifugal,
        warnings,
    )
    state.equilibrium_residuals = equilibrium_residual(state)
    return state


def equilibrium_residual(state: ReferenceState) -> dict:
    """Max-norm equilibrium diagnostics (pure report, raises nothing)."""
    model = state.model
    per_layer = []
    scale = 0.0
    for k, l in enumerate(model.layers):
        dp = state.p0[k].derivative_values()
        rg = l.rho_at(state.nodes[k]) * state.g0[k](state.nodes[k])
        scale = max(scale, float(np.max(np.abs(rg))))
        per_layer.append(float(np.max(np.abs(dp + rg))))
    scale = scale or 1.0
    jumps = []
    for itf in model.interfaces:
        if itf.outer is None:
            continue
        jumps.append(abs(float(state.p0[itf.inner](itf.radius)) - float(state.p0[itf.outer](itf.radius))))
    surf = abs(float(state.p0[-1](model.radius)))
    return {
        "momentum_residual": [x / scale for x in per_layer],
        "traction_jumps": [x / scale for x in jumps],
        "surface_pressure": surf / scale,
        # radial fields: both gradients are parallel to g0' by construction
        "parallelism_defect": 0.0,
        "scale": scale,
    }


def perturb_p0(state: ReferenceState, r0: float, rel: float, width: float) -> ReferenceState:
    """Copy of the state with a Gaussian bump injected into the p0 table."""
    k = state._lay(r0)
    new_p = list(state.p0)
    xs = state.nodes[k]
    vals = state.p0[k].values * (1.0 + rel * np.exp(-(((xs - r0) / width) ** 2)))
    new_p[k] = LayerTable(xs, vals)
    out = replace_state(state, p0=new_p)
    out.equilibrium_residuals = equilibrium_residual(out)
    return out


def replace_state(state: ReferenceState, **kw) -> ReferenceState:
    data = dict(
        model=state.model,
        resolution=state.resolution,
        nodes=state.nodes,
        phi0=state.phi0,
        g0=state.g0,
        p0=state.p0,
        n2=state.n2,
        ramps=state.ramps,
        include_centrifugal=state.include_centrifugal,
        warnings=list(state.warnings),
        tau0=state.tau0,
    )
    data.update(kw)
    return ReferenceState(**data)


# -- pointwise material stability ----------------------------------------------

_MANDEL = []
for _i in range(3):
    _e = np.zeros((3, 3))
    _e[_i, _i] = 1.0
    _MANDEL.append(_e)
for _i, _j in ((1, 2), (0, 2), (0, 1)):
    _e = np.zeros((3, 3))
    _e[_i, _j] = _e[_j, _i] = 1.0 / math.sqrt(2.0)
    _MANDEL.append(_e)


def _isotropic_tensor(kappa: float, mu: float) -> np.ndarray:
    d = np.eye(3)
    t = np.zeros((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    t[i, j, k, l] = (kappa - 2.0 / 3.0 * mu) * d[i, j] * d[k, l] + mu * (
                        d[i, k] * d[j, l] + d[i, l] * d[j, k]
                    )
    return t


def _prestress_correction(T: np.ndarray) -> np.ndarray:
    """One-half symmetrized prestress contribution to the stiffness tensor."""
    d = np.eye(3)
    c = np.zeros((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    c[i, j, k, l] = 0.5 * (
                        T[i, j] * d[k, l]
                        + T[k, l] * d[i, j]
                        - T[i, k] * d[j, l]
                        - T[j, k] * d[i, l]
                        - T[i, l] * d[j, k]
                        - T[j, l] * d[i, k]
                    )
    return c


def stability_quadratic_form(kappa: float, mu: float, p0: float, tau0: np.ndarray | None = None) -> np.ndarray:
    """Mandel matrix of the stability form on symmetric 2-tensors."""
    B = _isotropic_tensor(kappa, mu)
    if tau0 is not None:
        B = B + _prestress_correction(np.asarray(tau0, dtype=float))
    # subtract p0 * delta_ik delta_jl
    d = np.eye(3)
    B = B - p0 * np.einsum("ik,jl->ijkl", d, d)
    m6 = np.empty((6, 6))
    for a, Ea in enumerate(_MANDEL):
        for b, Eb in enumerate(_MANDEL):
            m6[a, b] = np.einsum("ijkl,kl,ij->", B, Eb, Ea)
    return 0.5 * (m6 + m6.T)


def check_pointwise_stability(state: ReferenceState, sample_radii) -> dict:
    """Smallest stability constant per sample radius (solid layers only).

    The constant is inf over symmetric unit-Frobenius eta of the quadratic
    form divided by |eta + eta^T|^2, i.e. lambda_min(Mandel)/4.
    """
    model = state.model
    rows = []
    tau_norm = 0.0
    if state.tau0 is not None:
        tau_norm = float(np.max(np.abs(np.asarray(state.tau0))))
    for r in np.atleast_1d(np.asarray(sample_radii, dtype=float)):
        k = state._lay(r)
        lay = model.layers[k]
        if lay.kind != "solid":
            raise DomainError(f"stability check needs a solid-layer radius, got r={r}")
        m6 = stability_quadratic_form(
            float(lay.kappa_at(r)), float(lay.mu_at(r)), float(state.p0_at(r)), state.tau0
        )
        lam = float(np.linalg.eigvalsh(m6)[0])
        c = lam / 4.0
        rows.append({"r": float(r), "c": c, "ok": c > 0.0})
    return {
        "samples": rows,
        "all_ok": all(row["ok"] for row in rows),
        "tau0_sup": tau_norm,
        "sigma_sup_solid": _sigma_sup_solid(state),
    }


def _sigma_sup_solid(state: ReferenceState) -> float:
    sup = 0.0
    for k, l in enumerate(state.model.layers):
        if l.kind != "solid":
            continue
        rs = np.linspace(l.r_in, l.r_out, 101)
        sup = max(sup, float(np.max(np.abs(state.sigma_at(rs, side="-" if k else "+")))))
    return sup


def brunt_vaisala(state: ReferenceState, r: float) -> float:
    """Stratification frequency squared at a fluid radius."""
    k = state._lay(r)
    lay = state.model.layers[k]
    if lay.kind != "fluid":
        raise DomainError(f"r={r} is not in a fluid layer")
    st = state.stilde_at(r)
    return float(-state.g0_at(r) * st / lay.rho_at(r))
