"""Nonlocal self-gravitation: the Eulerian potential perturbation induced by a
displacement field, per spherical-harmonic degree.

The mass redistribution of a displacement u is minus the weak divergence of
rho0*u: smooth per-layer parts plus interface surface densities
-[rho0 u . rhat] (outer boundary included with vacuum outside).  Per degree l
the potential solves the radial Poisson problem, evaluated exactly through
the kernel r_<^l / r_>^(l+1) / (2l+1): partial integrals of the per-layer
Laurent-polynomial sources are accumulated in closed form (power rule plus a
log term), so continuity and flux-jump conditions hold to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .basis import BasisSet
from .geometry import QuadratureRule
from .model import ReferenceState


class Laurent:
    """Sparse Laurent polynomial sum_p c_p r^p with integer powers."""

    def __init__(self, terms: dict[int, float] | None = None):
        self.terms = {p: c for p, c in (terms or {}).items() if c != 0.0}

    @staticmethod
    def from_poly(coefs, shift: int = 0, scale: float = 1.0) -> "Laurent":
        return Laurent({i + shift: scale * float(c) for i, c in enumerate(np.atleast_1d(coefs))})

    def __add__(self, other: "Laurent") -> "Laurent":
        t = dict(self.terms)
        for p, c in other.terms.items():
            t[p] = t.get(p, 0.0) + c
        return Laurent(t)

    def scaled(self, s: float) -> "Laurent":
        return Laurent({p: s * c for p, c in self.terms.items()})

    def shifted(self, dp: int) -> "Laurent":
        return Laurent({p + dp: c for p, c in self.terms.items()})

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for p, c in self.terms.items():
            out = out + c * r**p
        return out

    def integral(self, a, b):
        """Definite integral over [a, b]; handles the 1/r term via log."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        out = np.zeros(np.broadcast(a, b).shape)
        for p, c in self.terms.items():
            if p == -1:
                out = out + c * (np.log(b) - np.log(a))
            else:
                out = out + c / (p + 1) * (b ** (p + 1) - a ** (p + 1))
        return out


@dataclass
class HarmonicSource:
    """Mass-redistribution density of one (l, m): per-layer Laurent profiles of
    rho1 = -div(rho0 u) plus interface surface densities."""

    l: int
    m: int
    layer_profiles: list[Laurent]
    surface_radii: list[float]
    surface_densities: list[float]


def radial_profiles_to_source(l, m, model, u_radial, u_tangential) -> HarmonicSource:
    """Source of a field U(r) Y rhat + V(r) (r grad Y)/k with per-layer
    polynomial profiles (arrays indexed by layer, low-to-high coefficients)."""
    k = math.sqrt(l * (l + 1))
    profiles = []
    for j, lay in enumerate(model.layers):
        rho = np.asarray(lay.rho, dtype=float)
        fU = np.asarray(u_radial[j], dtype=float) if u_radial is not None else np.zeros(1)
        fV = np.asarray(u_tangential[j], dtype=float) if u_tangential is not None else np.zeros(1)
        p = P.polymul(rho, fU)
        lau = Laurent.from_poly(P.polyder(p), 0, -1.0) + Laurent.from_poly(p, -1, -2.0)
        if k > 0:
            lau = lau + Laurent.from_poly(P.polymul(rho, fV), -1, k)
        profiles.append(lau)
    radii, sig = [], []
    for itf in model.interfaces:
        r = itf.radius
        fin = float(P.polyval(r, np.asarray(u_radial[itf.inner], dtype=float))) if u_radial is not None else 0.0
        rin = model.layers[itf.inner].rho_at(r)
        if itf.outer is None:
            jump = -rin * fin  # vacuum outside
        else:
            fout = (
                float(P.polyval(r, np.asarray(u_radial[itf.outer], dtype=float))) if u_radial is not None else 0.0
            )
            jump = model.layers[itf.outer].rho_at(r) * fout - rin * fin
        radii.append(r)
        sig.append(-jump)
    return HarmonicSource(l, m, profiles, radii, sig)


class RadialPotential:
    """Potential s(r) Y_lm of one HarmonicSource, with one-sided derivatives."""

    def __init__(self, source: HarmonicSource, model, grav_const: float):
        self.src = source
        self.model = model
        self.G = grav_const
        l = source.l
        self.l = l
        breaks = model.layer_breaks
        # cumulative inner integrals A_k = int_0^{r_k} rho1 t^(l+2) dt (+ surfaces)
        self.fa = [p.shifted(l + 2) for p in source.layer_profiles]
        self.fb = [p.shifted(1 - l) for p in source.layer_profiles]
        self.A_at_break = np.zeros(len(breaks))
        for k1 in range(len(model.layers)):
            a, b = breaks[k1], breaks[k1 + 1]
            a = max(a, 1e-300)
            self.A_at_break[k1 + 1] = self.A_at_break[k1] + float(self.fa[k1].integral(a, b))
        self.B_at_break = np.zeros(len(breaks))
        for k1 in range(len(model.layers) - 1, -1, -1):
            a, b = breaks[k1], breaks[k1 + 1]
            a = max(a, 1e-300)
            self.B_at_break[k1] = self.B_at_break[k1 + 1] + float(self.fb[k1].integral(a, b))

    def _ab(self, r, side="-"):
        """A(r), B(r) with surface terms; side resolves ownership at interfaces."""
        r = np.asarray(r, dtype=float)
        k = self.model.layer_of(float(np.median(r)), side)
        a = self.model.layer_breaks[k]
        A = self.A_at_break[k] + self.fa[k].integral(max(a, 1e-300), np.maximum(r, 1e-300))
        B = self.B_at_break[k + 1] + self.fb[k].integral(np.maximum(r, 1e-300), self.model.layer_breaks[k + 1])
        for rs, sg in zip(self.src.surface_radii, self.src.surface_densities):
            inner = (r > rs) | ((np.abs(r - rs) < 1e-14 * max(rs, 1.0)) & (side == "+"))
            A = A + np.where(inner, sg * rs ** (self.l + 2), 0.0)
            B = B + np.where(~inner, sg * rs ** (1 - self.l), 0.0)
        return A, B

    def s_at(self, r, side="-"):
        # clamped below ~1e-9 R: regular sources make the kernel split vanish
        # at the center faster than any negative power grows
        r = np.maximum(np.asarray(r, dtype=float), 1e-9 * self.model.radius)
        if np.any(r > self.model.radius * (1 + 1e-12)):
            return self._exterior_s(r)
        A, B = self._ab(r, side)
        l = self.l
        pref = -4.0 * math.pi * self.G / (2 * l + 1)
        out = pref * (r ** (-(l + 1)) * A + r**l * B)
        return out if out.ndim else float(out)

    def ds_at(self, r, side="-"):
        r = np.maximum(np.asarray(r, dtype=float), 1e-9 * self.model.radius)
        if np.any(r > self.model.radius * (1 + 1e-12)):
            return self._exterior_ds(r)
        A, B = self._ab(r, side)
        l = self.l
        pref = -4.0 * math.pi * self.G / (2 * l + 1)
        out = pref * (-(l + 1) * r ** (-(l + 2)) * A + (l * r ** (l - 1) if l else 0.0) * B)
        return out if out.ndim else float(out)

    @property
    def exterior_coef(self) -> float:
        """s(r) = coef * r^-(l+1) for r >= R."""
        A = self.A_at_break[-1] + sum(
            sg * rs ** (self.l + 2) for rs, sg in zip(self.src.surface_radii, self.src.surface_densities)
        )
        return -4.0 * math.pi * self.G / (2 * self.l + 1) * A

    def _exterior_s(self, r):
        return self.exterior_coef * np.asarray(r, dtype=float) ** (-(self.l + 1))

    def _exterior_ds(self, r):
        return -(self.l + 1) * self.exterior_coef * np.asarray(r, dtype=float) ** (-(self.l + 2))

    def source_l1_norm(self) -> float:
        """L1 norm of the Poisson source -4 pi G div(rho0 u), per (l, m) slice
        taken with |Y| replaced by its L2 normalization (used for decay bounds
        after summing synthesized values; see ``far_field_decay``)."""
        total = 0.0
        for k1, lau in enumerate(self.src.layer_profiles):
            a, b = self.model.layer_breaks[k1], self.model.layer_breaks[k1 + 1]
            rs = np.linspace(max(a, 1e-12), b, 201)
            vals = np.abs(lau(rs)) * rs**2
            total += float(np.trapezoid(vals, rs))
        for rs_, sg in zip(self.src.surface_radii, self.src.surface_densities):
            total += abs(sg) * rs_**2
        return 4.0 * math.pi * self.G * total


@dataclass
class PotentialSolution:
    """Per-(l, m) radial potentials of one displacement field."""

    state: ReferenceState
    components: dict  # (l, m) -> RadialPotential

    def s_tables(self):
        """Nodal tables (l, m, r, s, ds/dr) for export."""
        rows = []
        for (l, m), pot in sorted(self.components.items()):
            for k, xs in enumerate(self.state.nodes):
                for r in xs:
                    side = "+" if r == self.state.model.layer_breaks[k] else "-"
                    rows.append((l, m, float(r), float(pot.s_at(r, side)), float(pot.ds_at(r, side))))
        return rows

    def eval_grid(self, radius: float, directions: np.ndarray) -> np.ndarray:
        """Synthesize S at radius * directions."""
        from .harmonics import HarmonicTable, solid_harmonic

        out = np.zeros(len(directions))
        for (l, m), pot in self.components.items():
            Y = HarmonicTable(solid_harmonic(l, m), directions).Y
            out += float(pot.s_at(radius)) * Y
        return out


def apply_gravity(state: ReferenceState, sources: list[HarmonicSource]) -> PotentialSolution:
    """Solve the potential perturbation for per-degree sources."""
    comps = {}
    for src in sources:
        comps[(src.l, src.m)] = RadialPotential(src, state.model, state.model.grav_const)
    return PotentialSolution(state, comps)


def basis_coefficient_sources(basis: BasisSet, coefs: np.ndarray, model=None) -> list[HarmonicSource]:
    """Sources of a basis combination, one per active (l, m)."""
    model = model if model is not None else basis.model
    out = []
    for (l, m), idxs in basis.blocks.items():
        nlay = len(model.layers)
        deg = basis.functions[idxs[0]].shape.coefs.shape[1]
        U = np.zeros((nlay, deg))
        V = np.zeros((nlay, deg))
        active = False
        for i in idxs:
            c = float(coefs[i])
            if c == 0.0:
                continue
            fn = basis.functions[i]
            if fn.family == "radial":
                U += c * fn.shape.coefs
                active = True
            elif fn.family == "tangential":
                V += c * fn.shape.coefs
                active = True
        if active:
            out.append(radial_profiles_to_source(l, m, model, U, V))
    return out


def apply_S(state: ReferenceState, basis: BasisSet, coefs: np.ndarray) -> PotentialSolution:
    """Potential perturbation of a basis-coefficient displacement."""
    lmax = max((f.l for f in basis.functions), default=0)
    if lmax > basis.lmax:
        raise ValueError("degree beyond basis band limit")
    if not np.allclose(basis.model.layer_breaks, state.model.layer_breaks):
        raise ValueError("basis and state use different layer geometries")
    return apply_gravity(state, basis_coefficient_sources(basis, coefs, state.model))


def basis_shape_potentials(basis: BasisSet, state: ReferenceState, lm) -> list[RadialPotential | None]:
    """Per-shape potentials of one (l, m) block; None for toroidal shapes."""
    model = state.model
    if not np.allclose(basis.model.layer_breaks, model.layer_breaks):
        raise ValueError("basis and state use different layer geometries")
    out = []
    for i in basis.blocks.get(lm, []):
        fn = basis.functions[i]
        if fn.family == "toroidal":
            out.append(None)
            continue
        U = fn.shape.coefs if fn.family == "radial" else None
        V = fn.shape.coefs if fn.family == "tangential" else None
        src = radial_profiles_to_source(
            lm[0],
            lm[1],
            model,
            U if U is not None else np.zeros_like(fn.shape.coefs),
            V if V is not None else np.zeros_like(fn.shape.coefs),
        )
        out.append(RadialPotential(src, model, model.grav_const))
    return out


def gravity_matrix(basis: BasisSet, state: ReferenceState, quad: QuadratureRule) -> np.ndarray:
    """Gamma[i, j] = -(1/4 pi G) int_R3 grad S(phi_i) . grad S(phi_j) dV.

    Interior by per-layer quadrature of the per-degree radial energy density;
    exterior added analytically from the multipole coefficient.  Symmetric
    negative semidefinite.
    """
    G = state.model.grav_const
    n = len(basis)
    out = np.zeros((n, n))
    if G == 0.0:
        return out
    for lm, idxs in basis.blocks.items():
        pots = basis_shape_potentials(basis, state, lm)
        live = [(a, p) for a, p in enumerate(pots) if p is not None]
        if not live:
            continue
        l = lm[0]
        nr_tot = sum(len(nd) for nd in quad.radial_nodes)
        sv = np.zeros((len(live), nr_tot))
        dsv = np.zeros((len(live), nr_tot))
        wall = np.zeros(nr_tot)
        rall = np.zeros(nr_tot)
        pos = 0
        for k in range(quad.n_layers):
            r, w = quad.layer_nodes(k)
            sl = slice(pos, pos + len(r))
            for a, (ai, p) in enumerate(live):
                sv[a, sl] = p.s_at(r)
                dsv[a, sl] = p.ds_at(r)
            wall[sl] = w
            rall[sl] = r
            pos += len(r)
        energy = np.einsum("aq,q,bq->ab", dsv, wall * rall**2, dsv)
        if l > 0:
            energy += l * (l + 1) * np.einsum("aq,q,bq->ab", sv, wall, sv)
        R = state.model.radius
        sR = np.array([p.s_at(R, side="-") + 0.0 for _, p in live])
        # exterior field of the multipole: (l+1) * R * s(R)^2 cross terms
        energy += (l + 1) * R * np.outer(sR, sR)
        gi = np.asarray([idxs[a] for a, _ in live])
        out[np.ix_(gi, gi)] += -energy / (4.0 * math.pi * G)
    return 0.5 * (out + out.T)


def gravity_matrix_ibp(basis: BasisSet, state: ReferenceState, quad: QuadratureRule) -> np.ndarray:
    """Independent route: Gamma[i, j] = int rho0 grad S(phi_i) . phi_j dV."""
    model = basis.model
    n = len(basis)
    out = np.zeros((n, n))
    if model.grav_const == 0.0:
        return out
    for lm, idxs in basis.blocks.items():
        pots = basis_shape_potentials(basis, state, lm)
        l = lm[0]
        k = math.sqrt(l * (l + 1))
        for b_loc, j in enumerate(idxs):
            pot = pots[b_loc]
            if pot is None:
                continue
            for a_loc, i in enumerate(idxs):
                fn = basis.functions[i]
                if fn.family == "toroidal":
                    continue
                acc = 0.0
                for lay_idx, lay in enumerate(model.layers):
                    r, w = quad.layer_nodes(lay_idx)
                    if lay_idx not in fn.shape.support:
                        continue
                    f = fn.shape.value(r, lay_idx)
                    rho = lay.rho_at(r)
                    if fn.family == "radial":
                        acc += float(np.sum(w * rho * pot.ds_at(r) * f * r**2))
                    else:
                        acc += float(np.sum(w * rho * pot.s_at(r) * f * k * r))
                out[i, j] += acc
    return out


def far_field_decay(solution: PotentialSolution, radii, n_dirs: int = 64, rng=None) -> dict:
    """Exterior decay report with the compact-support kernel bounds."""
    model = solution.state.model
    R = model.radius
    rng = rng or np.random.default_rng(7)
    dirs = rng.normal(size=(n_dirs, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    l1 = _total_source_l1(solution)
    from .harmonics import HarmonicTable, solid_harmonic

    rows = []
    for r in radii:
        if r <= R:
            raise ValueError("far-field radii must exceed the model radius")
        svals = solution.eval_grid(float(r), dirs)
        smax = float(np.max(np.abs(svals)))
        gtot = np.zeros((n_dirs, 3))
        for (l, m), pot in solution.components.items():
            tab = HarmonicTable(solid_harmonic(l, m), dirs)
            ds = float(pot.ds_at(r))
            s = float(pot.s_at(r))
            gtot += ds * tab.Y[:, None] * dirs + s * tab.gradY / r
        gmax = float(np.max(np.linalg.norm(gtot, axis=1)))
        bound_s = l1 / (4.0 * math.pi * (r - R))
        bound_g = l1 / (4.0 * math.pi * (r - R) ** 2)
        rows.append(
            {
                "r": float(r),
                "max_abs_s": smax,
                "max_abs_grad": gmax,
                "bound_s": bound_s,
                "bound_grad": bound_g,
                "s_ok": smax <= bound_s * (1 + 1e-9),
                "grad_ok": gmax <= bound_g * (1 + 1e-9),
            }
        )
    fitted = {}
    for (l, m), pot in solution.components.items():
        if abs(pot.exterior_coef) > 0:
            fitted[(l, m)] = -(l + 1)
    return {"rows": rows, "fitted_exponents": fitted, "source_l1": l1}


def _total_source_l1(solution: PotentialSolution) -> float:
    """L1 norm of the full 3-D source by quadrature over synthesized values."""
    from .geometry import build_sphere_rule
    from .harmonics import HarmonicTable, solid_harmonic

    state = solution.state
    model = state.model
    lmax = max((l for l, _ in solution.components), default=0)
    rule = build_sphere_rule(max(2 * lmax, 2))
    Ys = {lm: HarmonicTable(solid_harmonic(*lm), rule.directions).Y for lm in solution.components}
    G = model.grav_const
    total = 0.0
    for k1 in range(len(model.layers)):
        a, b = model.layer_breaks[k1], model.layer_breaks[k1 + 1]
        rs = np.linspace(max(a, 1e-9 * model.radius), b, 101)
        vals = np.zeros((len(rs), len(rule.weights)))
        for lm, pot in solution.components.items():
            vals += pot.src.layer_profiles[k1](rs)[:, None] * Ys[lm][None, :]
        radial = np.einsum("qn,n->q", np.abs(vals), rule.weights) * rs**2
        total += float(np.trapezoid(radial, rs))
    for i, itf in enumerate(model.interfaces):
        surf = np.zeros(len(rule.weights))
        for lm, pot in solution.components.items():
            surf += pot.src.surface_densities[i] * Ys[lm]
        total += float(np.sum(np.abs(surf) * rule.weights)) * itf.radius**2
    return 4.0 * math.pi * G * total


def poisson_residual(solution: PotentialSolution, nodes_per_layer: int = 24) -> dict:
    """Independent strong-form check: spectral differentiation of sampled s
    against the per-degree radial Poisson equation and the interface jumps."""
    from .model import LayerTable, _cheb_lobatto

    state = solution.state
    model = state.model
    G = model.grav_const
    worst_pde = 0.0
    worst_cont = 0.0
    worst_jump = 0.0
    for lm, pot in solution.components.items():
        l = lm[0]
        scale = max(
            max(float(np.max(np.abs(pot.s_at(_cheb_lobatto(max(a, 1e-6), b, 8))))) for a, b in zip(model.layer_breaks[:-1], model.layer_breaks[1:])),
            1e-300,
        )
        src_scale = 4 * math.pi * G * max(
            (max(abs(c) for c in lau.terms.values()) if lau.terms else 0.0) for lau in pot.src.layer_profiles
        )
        ref = max(scale, src_scale, 1e-300)
        for k1 in range(len(model.layers)):
            a, b = model.layer_breaks[k1], model.layer_breaks[k1 + 1]
            a_eff = a if a > 0 else 1e-4 * model.radius
            xs = _cheb_lobatto(a_eff, b, nodes_per_layer)
            tab = LayerTable(xs, pot.s_at(xs, side="+" if a > 0 else "-"))
            dtab = LayerTable(xs, tab.derivative_values())
            d2 = dtab.derivative_values()
            rhs = 4.0 * math.pi * G * pot.src.layer_profiles[k1](xs)
            resid = d2 + 2.0 * dtab.values / xs - l * (l + 1) * tab.values / xs**2 - rhs
            interior = slice(1, -1)
            worst_pde = max(worst_pde, float(np.max(np.abs(resid[interior]))) / ref)
        for i, itf in enumerate(model.interfaces):
            r = itf.radius
            s_in = float(pot.s_at(r, side="-"))
            ds_in = float(pot.ds_at(r, side="-"))
            if itf.outer is None:
                s_out = pot.exterior_coef * r ** -(l + 1)
                ds_out = -(l + 1) * pot.exterior_coef * r ** -(l + 2)
            else:
                s_out = float(pot.s_at(r, side="+"))
                ds_out = float(pot.ds_at(r, side="+"))
            worst_cont = max(worst_cont, abs(s_out - s_in) / ref)
            jump = (ds_out - ds_in) - 4.0 * math.pi * G * pot.src.surface_densities[i]
            worst_jump = max(worst_jump, abs(jump) / ref)
    return {"pde": worst_pde, "continuity": worst_cont, "flux_jump": worst_jump}
