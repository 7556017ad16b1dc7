"""Assembly of the energy forms on a basis, direct quadrature evaluators for
the preliminary/boundary-matched/coercive form variants, and coercivity
constant estimation.

Stiffness variants share assembled pieces:

    A(a2) = A_core + Gamma            (full, with self-gravitation)
    A(a3) = A_core                    (potential perturbation dropped)
    A(a4) = A_core - Hessian block    (also geopotential curvature dropped)

where A_core collects every non-gravitational group of the coercive form.
All volume/surface groups are (l, m)-block-diagonal for spherically
symmetric states; the Coriolis matrix couples blocks and is assembled on the
full grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import BasisSet, BlockTables, gram_matrices
from .fields import FieldConstraints, PiecewiseField, _numeric_traction
from .geometry import ContractError, QuadratureRule, SphereRule, SphereTransform
from .gravity import RadialPotential, gravity_matrix
from .harmonics import HarmonicTable, solid_harmonic
from .model import EarthModel, ReferenceState

VARIANTS = ("a2", "a3", "a4")


class AssemblyError(RuntimeError):
    pass


def state_quadrature(state: ReferenceState, radial_order: int, spherical_degree: int, **kw) -> QuadratureRule:
    """Quadrature aligned with the state: panels split at cutoff-ramp edges so
    the stress-extension profile is polynomial on every panel."""
    from .geometry import build_quadrature

    seg: dict[int, list[float]] = {}
    for ramp in state.ramps:
        edge = ramp.interface_radius + ramp.direction * ramp.thickness
        seg.setdefault(ramp.layer, []).append(float(edge))
    return build_quadrature(state.model.layer_breaks, radial_order, spherical_degree, segment_breaks=seg, **kw)


@dataclass
class AssembledSystem:
    basis: BasisSet
    state: ReferenceState
    quad: QuadratureRule
    variant: str
    M: np.ndarray
    A: np.ndarray
    C: np.ndarray
    Gamma: np.ndarray
    G_E: np.ndarray
    hessian_block: np.ndarray
    A_core: np.ndarray
    alpha: float | None = None
    beta: float | None = None
    meta: dict = field(default_factory=dict)

    def with_variant(self, variant: str) -> "AssembledSystem":
        return AssembledSystem(
            self.basis,
            self.state,
            self.quad,
            variant,
            self.M,
            _variant_A(variant, self.A_core, self.Gamma, self.hessian_block),
            self.C,
            self.Gamma,
            self.G_E,
            self.hessian_block,
            self.A_core,
            meta=dict(self.meta),
        )


def _variant_A(variant, core, gamma, hess):
    if variant == "a2":
        return core + gamma
    if variant == "a3":
        return core.copy()
    if variant == "a4":
        return core - hess
    raise ValueError(f"unknown variant {variant!r}")


class StateTables:
    """Reference-state coefficient profiles at the quadrature nodes."""

    def __init__(self, state: ReferenceState, quad: QuadratureRule, p_floor: float = 1e-10):
        self.state = state
        self.quad = quad
        model = state.model
        self.layers = []
        pscale = state.pressure_scale
        for k, lay in enumerate(model.layers):
            r, w = quad.layer_nodes(k)
            d = {
                "r": r,
                "w": w,
                "rho": lay.rho_at(r),
                "drho": np.polynomial.polynomial.polyval(
                    r, np.polynomial.polynomial.polyder(np.asarray(lay.rho, dtype=float))
                ),
                "p0": np.asarray(state.p0[k](r)),
                "g0": np.asarray(state.g0[k](r)),
                "g0d": np.asarray(state.g0_deriv_at(r, side="+" if k else "-")),
                "sigma": np.asarray(state.sigma_at(r, side="+" if k else "-")),
                "dsigma": np.asarray(state.sigma_deriv_at(r, side="+" if k else "-")),
                "kappa": lay.kappa_at(r),
                "mu": lay.mu_at(r),
            }
            if lay.kind == "fluid":
                gam = lay.gamma_at(r)
                pg = d["p0"] * gam
                if np.min(np.abs(pg)) <= p_floor * max(pscale, 1e-300):
                    raise AssemblyError(
                        f"p0*gamma below floor in fluid layer {k}: min {np.min(np.abs(pg)):.3e}"
                    )
                d["pgamma"] = pg
                d["stilde"] = d["drho"] + d["g0"] * d["rho"] ** 2 / pg
                d["kappa_eff"] = pg
            else:
                d["kappa_eff"] = d["kappa"]
            self.layers.append(d)


def assemble(
    basis: BasisSet,
    state: ReferenceState,
    quad: QuadratureRule,
    variant: str = "a2",
    omega=None,
    equilibrium_gate: float = 1e-6,
    p_floor: float = 1e-10,
) -> AssembledSystem:
    """Assemble mass, stiffness (selected variant), Coriolis, gravity and
    trial-space Gram matrices by blockwise quadrature."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    model = basis.model
    res = state.equilibrium_residuals
    worst = max(res["momentum_residual"] + res["traction_jumps"] + [res["surface_pressure"]])
    if worst > equilibrium_gate:
        raise AssemblyError(f"equilibrium residual {worst:.3e} above gate {equilibrium_gate:.1e}: {res}")
    tabs = StateTables(state, quad, p_floor)
    n = len(basis)
    core = np.zeros((n, n))
    hess = np.zeros((n, n))
    wd = quad.sphere.weights
    dirs = quad.sphere.directions

    for lm, idxs in basis.blocks.items():
        bt = BlockTables(basis, lm, quad)
        gi = np.asarray(idxs)
        blk_core = np.zeros((len(gi), len(gi)))
        blk_hess = np.zeros((len(gi), len(gi)))
        for k, lay in enumerate(model.layers):
            t = tabs.layers[k]
            vals, grads = bt.layer_fields(k)
            W = t["w"][:, None] * t["r"][:, None] ** 2 * wd[None, :]
            radu = np.einsum("aqnd,nd->aqn", vals, dirs)
            div = np.einsum("aqnii->aqn", grads)
            if lay.kind == "solid":
                c1 = t["kappa_eff"] - 2.0 / 3.0 * t["mu"] - t["p0"] - t["sigma"]
                c2 = t["p0"] + t["sigma"]
                mu = t["mu"]
                blk_core += np.einsum("aqn,qn,bqn->ab", div, W * c1[:, None], div, optimize=True)
                blk_core += np.einsum("aqnij,qn,bqnij->ab", grads, W * mu[:, None], grads, optimize=True)
                blk_core += np.einsum(
                    "aqnij,qn,bqnji->ab", grads, W * (mu + c2)[:, None], grads, optimize=True
                )
                # lower-order symmetrized groups
                cL1 = t["g0"] * t["drho"]
                blk_core += -np.einsum("aqn,qn,bqn->ab", radu, W * cL1[:, None], radu, optimize=True)
                w2 = t["dsigma"] + t["rho"] * t["g0"]
                m2 = np.einsum("aqn,qn,bqn->ab", radu, W * w2[:, None], div, optimize=True)
                blk_core += -0.5 * (m2 + m2.T)
                w3 = t["dsigma"] - t["rho"] * t["g0"]
                E = np.einsum("aqnij,nj->aqni", grads, dirs)
                m3 = np.einsum("aqni,qn,bqni->ab", E, W * w3[:, None], vals, optimize=True)
                blk_core += 0.5 * (m3 + m3.T)
            else:
                D = t["rho"][None, :, None] * div + (t["drho"] - t["stilde"])[None, :, None] * radu
                cF = t["pgamma"] / t["rho"] ** 2
                blk_core += np.einsum("aqn,qn,bqn->ab", D, W * cF[:, None], D, optimize=True)
                cN = t["stilde"] * t["g0"]
                blk_core += -np.einsum("aqn,qn,bqn->ab", radu, W * cN[:, None], radu, optimize=True)
            # geopotential curvature block (removed in a4)
            hcoef1 = t["rho"] * (t["g0d"] - t["g0"] / t["r"])
            hcoef2 = t["rho"] * t["g0"] / t["r"]
            blk_hess += np.einsum("aqn,qn,bqn->ab", radu, W * hcoef1[:, None], radu, optimize=True)
            blk_hess += np.einsum("aqnd,qn,bqnd->ab", vals, W * hcoef2[:, None], vals, optimize=True)
        # surface groups
        for itf in model.interfaces:
            r = itf.radius
            ws = wd * r**2
            if itf.kind == "SS":
                g0 = float(state.g0[itf.inner](r))
                drh = model.layers[itf.outer].rho_at(r) - model.layers[itf.inner].rho_at(r)
                v = bt.surface_values(r, itf.inner)
                un = np.einsum("and,nd->an", v, dirs)
                blk_core += -drh * g0 * np.einsum("an,n,bn->ab", un, ws, un, optimize=True)
            elif itf.kind == "FF":
                g0 = float(state.g0[itf.inner](r))
                drh = model.layers[itf.outer].rho_at(r) - model.layers[itf.inner].rho_at(r)
                v = bt.surface_values(r, itf.inner)
                un = np.einsum("and,nd->an", v, dirs)
                blk_core += -drh * g0 * np.einsum("an,n,bn->ab", un, ws, un, optimize=True)
            elif itf.kind == "FS":
                g0 = float(state.g0[itf.minus](r))
                drh = model.layers[itf.plus].rho_at(r) - model.layers[itf.minus].rho_at(r)
                v_solid = bt.surface_values(r, itf.plus)
                v_any = bt.surface_values(r, itf.inner)  # normal component continuous
                un = np.einsum("and,nd->an", v_any, dirs) * itf.nu_sign
                us = np.einsum("and,nd->an", v_solid, dirs)
                mfs = drh * g0 * np.einsum("an,n,bn->ab", us, ws, un, optimize=True)
                blk_core += -0.5 * (mfs + mfs.T)
            else:  # outer boundary
                g0 = float(state.g0[itf.inner](r))
                rho = model.layers[itf.inner].rho_at(r)
                v = bt.surface_values(r, itf.inner)
                un = np.einsum("and,nd->an", v, dirs)
                blk_core += rho * g0 * np.einsum("an,n,bn->ab", un, ws, un, optimize=True)
        core[np.ix_(gi, gi)] += blk_core
        hess[np.ix_(gi, gi)] += blk_hess

    core = 0.5 * (core + core.T)
    hess = 0.5 * (hess + hess.T)
    gamma = gravity_matrix(basis, state, quad)
    M, G_E = gram_matrices(basis, state, quad)
    C = coriolis_matrix(basis, quad, omega if omega is not None else model.omega)
    A = _variant_A(variant, core, gamma, hess)
    meta = {"equilibrium_residuals": res, "omega": tuple(omega if omega is not None else model.omega)}
    return AssembledSystem(basis, state, quad, variant, M, A, C, gamma, G_E, hess, core, meta=meta)


def coriolis_matrix(basis: BasisSet, quad: QuadratureRule, omega) -> np.ndarray:
    """C[i, j] = int rho0 2 (Omega x phi_j) . phi_i dV, exactly antisymmetric."""
    om = np.asarray(omega, dtype=float)
    n = len(basis)
    C = np.zeros((n, n))
    if not np.any(om):
        return C
    model = basis.model
    wd = quad.sphere.weights
    nd = len(quad.sphere.directions)
    bts = {lm: BlockTables(basis, lm, quad) for lm in basis.blocks}
    for k, lay in enumerate(model.layers):
        r, wr = quad.layer_nodes(k)
        nq = len(r)
        V = np.zeros((n, nq, nd, 3))
        for lm, idxs in basis.blocks.items():
            vals, _ = bts[lm].layer_fields(k)
            V[idxs] = vals
        W = (wr[:, None] * r[:, None] ** 2 * wd[None, :]) * lay.rho_at(r)[:, None]
        Vflat = (V * W[None, :, :, None]).reshape(n, -1)
        cross = np.cross(np.broadcast_to(om, (n, nq, nd, 3)), V).reshape(n, -1)
        C += Vflat @ (2.0 * cross).T
    return 0.5 * (C - C.T)


# -- coercivity ------------------------------------------------------------------


@dataclass
class CoercivityResult:
    found: bool
    alpha: float
    beta: float
    beta_grid: np.ndarray
    stiffness_min: float
    bound_const: float
    negative_direction: np.ndarray | None
    localization: dict | None
    scanned: list


def estimate_coercivity(
    system: AssembledSystem,
    beta_grid=None,
    negative_tol: float = 1e-10,
    alpha_floor_rel: float = 1e-10,
) -> CoercivityResult:
    """Largest alpha with A + beta*M - alpha*G_E >= 0, scanning beta.

    alpha(beta) is the smallest generalized eigenvalue of (A + beta*M, G_E),
    computed densely; the grid is logarithmic around the problem scale with
    beta = 0 tried first.  A beta is accepted only when alpha clears a small
    relative floor (neutral modes otherwise leave the shifted block
    numerically singular).  Also reports the minimum of the stiffness pencil
    (A, M) with its eigenvector when negative (stability diagnostic).
    """
    A, M, G = system.A, system.M, system.G_E
    scale = float(np.linalg.norm(A) / max(np.linalg.norm(M), 1e-300))
    if beta_grid is None:
        beta_grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 40) * scale])
    evals, evecs = scipy.linalg.eigh(A, M)
    stiff_min = float(evals[0])
    neg_vec = None
    localization = None
    if stiff_min < -negative_tol * max(abs(evals).max(), 1.0):
        neg_vec = evecs[:, 0]
        if system.basis is not None:
            localization = _localize(system, neg_vec)
    bound = float(np.max(np.abs(scipy.linalg.eigvalsh(A, G))))
    scanned = []
    found = False
    alpha = beta = float("nan")
    floor = alpha_floor_rel * max(bound, 1e-300)
    for b in beta_grid:
        a_min = float(scipy.linalg.eigvalsh(A + b * M, G)[0])
        scanned.append((float(b), a_min))
        if a_min > floor:
            try:  # the shifted block must also factor (product-Gram SPD)
                scipy.linalg.cho_factor(A + b * M)
            except scipy.linalg.LinAlgError:
                continue
            found, alpha, beta = True, a_min, float(b)
            break
    res = CoercivityResult(found, alpha, beta, np.asarray(beta_grid), stiff_min, bound, neg_vec, localization, scanned)
    if found:
        system.alpha, system.beta = alpha, beta
    return res


def _localize(system: AssembledSystem, coefs: np.ndarray) -> dict:
    """Radial density profile of a coefficient vector (for diagnostics)."""
    basis = system.basis
    quad = system.quad
    wd = quad.sphere.weights
    rs, dens = [], []
    for k, lay in enumerate(basis.model.layers):
        r, _ = quad.layer_nodes(k)
        e = np.zeros(len(r))
        for lm, idxs in basis.blocks.items():
            bt = BlockTables(basis, lm, quad)
            vals, _ = bt.layer_fields(k)
            u = np.einsum("a,aqnd->qnd", coefs[idxs], vals)
            e += np.einsum("qnd,n->q", u**2, wd) * lay.rho_at(r) * r**2
        rs.extend(r.tolist())
        dens.extend(e.tolist())
    rs = np.asarray(rs)
    dens = np.asarray(dens)
    peak = float(rs[int(np.argmax(dens))])
    total = float(np.sum(dens)) or 1.0
    return {"radii": rs, "density": dens, "peak_radius": peak, "total": total}


def find_negative_direction(system: AssembledSystem, tol: float = 1e-10):
    """Direction with negative stiffness energy, or None (stability check)."""
    evals, evecs = scipy.linalg.eigh(system.A, system.M)
    scale = float(np.max(np.abs(evals))) or 1.0
    if evals[0] >= -tol * scale:
        return None
    vec = evecs[:, 0]
    return {"value": float(evals[0]), "vector": vec, "localization": _localize(system, vec)}


def system_from_matrices(M, A, C=None, G_E=None, variant: str = "a3") -> AssembledSystem:
    """Bare AssembledSystem from explicit matrices (reduced-model studies and
    scalar reference problems)."""
    M = np.asarray(M, dtype=float)
    A = np.asarray(A, dtype=float)
    n = M.shape[0]
    C = np.zeros((n, n)) if C is None else np.asarray(C, dtype=float)
    G = M.copy() if G_E is None else np.asarray(G_E, dtype=float)
    zeros = np.zeros((n, n))
    return AssembledSystem(None, None, None, variant, M, A, C, zeros, G, zeros, A.copy())


def ensure_coercivity(system: AssembledSystem) -> tuple[float, float]:
    if system.alpha is None or system.beta is None:
        res = estimate_coercivity(system)
        if not res.found:
            raise AssemblyError("no coercivity constants found within the scan range")
    return system.alpha, system.beta


# -- direct quadrature evaluation of the named forms -------------------------------


def _field_modes(*fields: PiecewiseField):
    modes = set()
    for f in fields:
        for (l, m, _fam) in f.profiles:
            modes.add((l, m))
    return sorted(modes)


def _check_bc(state, u, v, tier_u, tier_v, quad, tol):
    modes = _field_modes(u, v)
    fc = FieldConstraints(state, modes, deg=1, rule=quad.sphere)
    bad = fc.check(u, tier_u, tol)
    if bad:
        raise ContractError(f"first field violates: {bad[0]}")
    bad = fc.check(v, tier_v, tol)
    if bad:
        raise ContractError(f"second field violates: {bad[0]}")


def _volume_common(state: ReferenceState, quad, u: PiecewiseField, v: PiecewiseField):
    """int (Lambda:grad u):grad v + rho u.HessPhi.v dV by layer quadrature."""
    model = state.model
    tabs = StateTables(state, quad)
    dirs = quad.sphere.directions
    wd = quad.sphere.weights
    total = 0.0
    for k, lay in enumerate(model.layers):
        t = tabs.layers[k]
        r = t["r"]
        pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
        side = "+" if k else "-"
        uv, ug = u.evaluate(pts, side=side)
        vv, vg = v.evaluate(pts, side=side)
        nq, ndir = len(r), len(dirs)
        W = (t["w"][:, None] * r[:, None] ** 2 * wd[None, :]).reshape(-1)
        rl = np.repeat(r, ndir)
        c_kap = np.repeat(t["kappa_eff"] - 2.0 / 3.0 * t["mu"] - t["p0"], ndir)
        c_mu = np.repeat(t["mu"], ndir)
        c_p = np.repeat(t["p0"], ndir)
        du = np.trace(ug, axis1=1, axis2=2)
        dv = np.trace(vg, axis1=1, axis2=2)
        fro = np.einsum("qij,qij->q", ug, vg)
        trp = np.einsum("qij,qji->q", ug, vg)
        total += float(np.sum(W * (c_kap * du * dv + c_mu * fro + (c_mu + c_p) * trp)))
        # geopotential curvature
        nu = np.tile(dirs, (nq, 1))
        un = np.einsum("qd,qd->q", uv, nu)
        vn = np.einsum("qd,qd->q", vv, nu)
        g0 = np.repeat(t["g0"], ndir)
        g0d = np.repeat(t["g0d"], ndir)
        rho = np.repeat(t["rho"], ndir)
        hessterm = rho * (g0d * un * vn + g0 / rl * (np.einsum("qd,qd->q", uv, vv) - un * vn))
        total += float(np.sum(W * hessterm))
    return total


def _grav_grid_term(state: ReferenceState, quad, u: PiecewiseField, v: PiecewiseField):
    """int rho grad S(u) . v dV on the volume grid."""
    pots = {}
    for src in u.sources():
        pots[(src.l, src.m)] = RadialPotential(src, state.model, state.model.grav_const)
    if not pots:
        return 0.0
    model = state.model
    dirs = quad.sphere.directions
    wd = quad.sphere.weights
    tabs = {lm: HarmonicTable(solid_harmonic(*lm), dirs) for lm in pots}
    total = 0.0
    for k, lay in enumerate(model.layers):
        r, wr = quad.layer_nodes(k)
        side = "+" if k else "-"
        pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
        vv, _ = v.evaluate(pts, side=side)
        vv = vv.reshape(len(r), len(dirs), 3)
        gS = np.zeros_like(vv)
        for lm, pot in pots.items():
            s = np.asarray(pot.s_at(r, side=side))
            ds = np.asarray(pot.ds_at(r, side=side))
            gS += ds[:, None, None] * tabs[lm].Y[None, :, None] * dirs[None, :, :]
            gS += s[:, None, None] * tabs[lm].gradY[None, :, :] / r[:, None, None]
        W = wr[:, None] * r[:, None] ** 2 * wd[None, :]
        rho = lay.rho_at(r)[:, None]
        total += float(np.einsum("qn,qnd,qnd->", W * rho, gS, vv))
    return total


def _grav_energy_term(state: ReferenceState, quad, u: PiecewiseField, v: PiecewiseField):
    """-(1/4 pi G) int_R3 grad S(u) . grad S(v) dV, per-degree radial integrals."""
    G = state.model.grav_const
    if G == 0.0:
        return 0.0
    pu = {}
    pv = {}
    for src in u.sources():
        pu[(src.l, src.m)] = RadialPotential(src, state.model, G)
    for src in v.sources():
        pv[(src.l, src.m)] = RadialPotential(src, state.model, G)
    shared = sorted(set(pu) & set(pv))
    total = 0.0
    R = state.model.radius
    for lm in shared:
        l = lm[0]
        acc = 0.0
        for k in range(quad.n_layers):
            r, w = quad.layer_nodes(k)
            su, dsu = pu[lm].s_at(r), pu[lm].ds_at(r)
            sv, dsv = pv[lm].s_at(r), pv[lm].ds_at(r)
            acc += float(np.sum(w * (dsu * dsv * r**2 + (l * (l + 1)) * su * sv)))
        acc += (l + 1) * R * float(pu[lm].s_at(R)) * float(pv[lm].s_at(R))
        total += acc
    return -total / (4.0 * math.pi * G)


def _fluid_surface_terms_original(state, quad, u, v):
    """int_SigmaF [(nu . T^PK1(u)) . v]_-^+ dSigma."""
    model = state.model
    total = 0.0
    rule = quad.sphere
    for itf in model.interfaces:
        if not itf.is_fluid_interface:
            continue
        r = itf.radius
        tp = _numeric_traction(state, u, r, itf.plus, rule)
        tm = _numeric_traction(state, u, r, itf.minus, rule)
        pts = rule.points(r)
        side_p = "-" if model.layer_breaks[itf.plus] < r else "+"
        side_m = "-" if model.layer_breaks[itf.minus] < r else "+"
        vp, _ = v.evaluate(pts, side=side_p)
        vm, _ = v.evaluate(pts, side=side_m)
        ws = rule.weights * r**2
        total += itf.nu_sign * float(
            np.einsum("n,nd,nd->", ws, tp, vp) - np.einsum("n,nd,nd->", ws, tm, vm)
        )
    return total


def _fluid_surface_terms_matched(state, quad, u, v, lmax):
    """The boundary-matched replacement of the fluid bracket."""
    model = state.model
    rule = quad.sphere
    tr = SphereTransform(rule, lmax)
    total = 0.0
    for itf in model.interfaces:
        if not itf.is_fluid_interface:
            continue
        r = itf.radius
        p0 = float(state.p0[itf.minus](r))
        pts = rule.points(r)
        sides = {}
        for name, lay in (("plus", itf.plus), ("minus", itf.minus)):
            sides[name] = "-" if model.layer_breaks[lay] < r else "+"
        up, _ = u.evaluate(pts, side=sides["plus"])
        um, _ = u.evaluate(pts, side=sides["minus"])
        vp, _ = v.evaluate(pts, side=sides["plus"])
        vm, _ = v.evaluate(pts, side=sides["minus"])
        nu = rule.directions * itf.nu_sign
        ws = rule.weights * r**2
        ju, jv = up - um, vp - vm
        un = np.einsum("nd,nd->n", um, nu)
        vn = np.einsum("nd,nd->n", vm, nu)
        gv, _ = _surface_grad(vn, r, tr)
        gu, _ = _surface_grad(un, r, tr)
        term1 = float(np.einsum("n,nd,nd->", ws * p0, ju, gv) + np.einsum("n,nd,nd->", ws * p0, jv, gu))
        # Weingarten part with nu-orientation; tangential projections
        upt = up - np.einsum("nd,nd->n", up, nu)[:, None] * nu
        umt = um - np.einsum("nd,nd->n", um, nu)[:, None] * nu
        vpt = vp - np.einsum("nd,nd->n", vp, nu)[:, None] * nu
        vmt = vm - np.einsum("nd,nd->n", vm, nu)[:, None] * nu
        wein = itf.nu_sign / r
        term2 = -p0 * wein * float(
            np.einsum("n,nd,nd->", ws, upt, vpt) - np.einsum("n,nd,nd->", ws, umt, vmt)
        )
        total += term1 + term2
    return total


def _surface_grad(samples, radius, tr: SphereTransform):
    from .geometry import surface_gradient

    return surface_gradient(samples, radius, tr)


def evaluate_form(
    variant: str,
    u: PiecewiseField,
    v: PiecewiseField,
    state: ReferenceState,
    quad: QuadratureRule,
    check_bc: bool = True,
    bc_tol: float = 1e-8,
) -> float:
    """Direct numerical quadrature of the named sesquilinear form.

    variant 'original' requires the first field to satisfy the dynamic
    tangential-slip condition; 'a1'/'a2' require kinematic matching of both
    fields.  Violations raise ContractError naming the condition.
    """
    lmax = max(l for (l, m) in _field_modes(u, v))
    if check_bc:
        tier_u = "dynamic" if variant == "original" else "kinematic"
        _check_bc(state, u, v, tier_u, "kinematic", quad, bc_tol)
    if variant in ("original", "a1"):
        total = _volume_common(state, quad, u, v)
        total += _grav_grid_term(state, quad, u, v)
        if variant == "original":
            total += _fluid_surface_terms_original(state, quad, u, v)
        else:
            total += _fluid_surface_terms_matched(state, quad, u, v, lmax)
        return total
    if variant != "a2":
        raise ValueError("variant must be 'original', 'a1' or 'a2'")
    return _evaluate_a2(state, quad, u, v)


def equivalence_report(state: ReferenceState, quad: QuadratureRule, modes, n_pairs: int, seed: int, deg: int = 4):
    """Rows (pair, a_original, a1, a2, |orig-a1|_rel, |a1-a2|_rel) on randomized
    condition-matched fields; feeds the form-evaluation report artifact."""
    rng = np.random.default_rng(seed)
    fc = FieldConstraints(state, list(modes), deg=deg, rule=quad.sphere)
    rows = []
    for k in range(n_pairs):
        u = fc.constrained_sample(rng, tier="dynamic")
        v = fc.constrained_sample(rng, tier="kinematic")
        a2 = evaluate_form("a2", u, v, state, quad)
        a1 = evaluate_form("a1", u, v, state, quad)
        ao = evaluate_form("original", u, v, state, quad)
        scale = max(abs(a2), 1.0)
        rows.append((k, ao, a1, a2, abs(ao - a1) / scale, abs(a1 - a2) / scale))
    return rows


def _evaluate_a2(state: ReferenceState, quad, u: PiecewiseField, v: PiecewiseField) -> float:
    model = state.model
    tabs = StateTables(state, quad)
    dirs = quad.sphere.directions
    wd = quad.sphere.weights
    total = 0.0
    for k, lay in enumerate(model.layers):
        t = tabs.layers[k]
        r = t["r"]
        nq, ndir = len(r), len(dirs)
        side = "+" if k else "-"
        pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
        uv, ug = u.evaluate(pts, side=side)
        vv, vg = v.evaluate(pts, side=side)
        W = (t["w"][:, None] * r[:, None] ** 2 * wd[None, :]).reshape(-1)
        nu = np.tile(dirs, (nq, 1))
        rep = lambda arr: np.repeat(arr, ndir)
        du = np.trace(ug, axis1=1, axis2=2)
        dv = np.trace(vg, axis1=1, axis2=2)
        un = np.einsum("qd,qd->q", uv, nu)
        vn = np.einsum("qd,qd->q", vv, nu)
        if lay.kind == "solid":
            c1 = rep(t["kappa_eff"] - 2.0 / 3.0 * t["mu"] - t["p0"] - t["sigma"])
            c2 = rep(t["p0"] + t["sigma"])
            mu = rep(t["mu"])
            fro = np.einsum("qij,qij->q", ug, vg)
            trp = np.einsum("qij,qji->q", ug, vg)
            total += float(np.sum(W * (c1 * du * dv + mu * fro + (mu + c2) * trp)))
            total += float(np.sum(-W * rep(t["g0"] * t["drho"]) * un * vn))
            w2 = rep(t["dsigma"] + t["rho"] * t["g0"])
            total += float(np.sum(-0.5 * W * w2 * (un * dv + vn * du)))
            w3 = rep(t["dsigma"] - t["rho"] * t["g0"])
            Eu = np.einsum("qij,qj->qi", ug, nu)  # d_i u_k nu_k
            Ev = np.einsum("qij,qj->qi", vg, nu)
            total += float(np.sum(0.5 * W * w3 * (np.einsum("qi,qi->q", Eu, vv) + np.einsum("qi,qi->q", Ev, uv))))
        else:
            Du = rep(t["rho"]) * du + rep(t["drho"] - t["stilde"]) * un
            Dv = rep(t["rho"]) * dv + rep(t["drho"] - t["stilde"]) * vn
            total += float(np.sum(W * rep(t["pgamma"] / t["rho"] ** 2) * Du * Dv))
            total += float(np.sum(-W * rep(t["stilde"] * t["g0"]) * un * vn))
    # surface groups
    rule = quad.sphere
    for itf in model.interfaces:
        r = itf.radius
        ws = rule.weights * r**2
        pts = rule.points(r)
        if itf.kind in ("SS", "FF"):
            g0 = float(state.g0[itf.inner](r))
            drh = model.layers[itf.outer].rho_at(r) - model.layers[itf.inner].rho_at(r)
            uin, _ = u.evaluate(pts, side="-")
            vin, _ = v.evaluate(pts, side="-")
            if itf.kind == "SS":
                ugn = np.einsum("nd,nd->n", uin, rule.directions)
                vgn = np.einsum("nd,nd->n", vin, rule.directions)
                total += float(np.sum(-drh * g0 * ws * ugn * vgn))
            else:
                ugn = np.einsum("nd,nd->n", uin, rule.directions)
                vgn = np.einsum("nd,nd->n", vin, rule.directions)
                total += float(np.sum(-drh * g0 * ws * ugn * vgn))
        elif itf.kind == "FS":
            g0 = float(state.g0[itf.minus](r))
            drh = model.layers[itf.plus].rho_at(r) - model.layers[itf.minus].rho_at(r)
            side_p = "-" if model.layer_breaks[itf.plus] < r else "+"
            us, _ = u.evaluate(pts, side=side_p)
            vs, _ = v.evaluate(pts, side=side_p)
            uany, _ = u.evaluate(pts, side="-")
            vany, _ = v.evaluate(pts, side="-")
            nu = rule.directions * itf.nu_sign
            usn = np.einsum("nd,nd->n", us, rule.directions)
            vsn = np.einsum("nd,nd->n", vs, rule.directions)
            uan = np.einsum("nd,nd->n", uany, nu)
            van = np.einsum("nd,nd->n", vany, nu)
            total += float(np.sum(-0.5 * drh * g0 * ws * (van * usn + uan * vsn)))
        else:
            g0 = float(state.g0[itf.inner](r))
            rho = model.layers[itf.inner].rho_at(r)
            uin, _ = u.evaluate(pts, side="-")
            vin, _ = v.evaluate(pts, side="-")
            ugn = np.einsum("nd,nd->n", uin, rule.directions)
            vgn = np.einsum("nd,nd->n", vin, rule.directions)
            total += float(np.sum(rho * g0 * ws * ugn * vgn))
    total += _grav_energy_term(state, quad, u, v)
    return total
