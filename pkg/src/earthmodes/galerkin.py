"""Nested-subspace approximation: a chain of trial spaces built by extension,
per-level systems as leading sub-blocks of the finest assembly, the discrete
energy estimate, and the strong-convergence study against a doubled-quadrature
reference solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import BasisSet, build_basis, extend_basis
from .evolution import Forcing, FirstOrderSystem, Trajectory, build_first_order, propagate
from .forms import AssembledSystem, assemble, ensure_coercivity, state_quadrature
from .model import ReferenceState


@dataclass
class Hierarchy:
    state: ReferenceState
    levels: list[BasisSet]
    dims: list[int]
    base_system: AssembledSystem  # finest basis at base quadrature
    reference_system: AssembledSystem  # finest basis at doubled quadrature
    beta: float
    schedule: list[tuple[int, int]]
    meta: dict = field(default_factory=dict)

    def level_system(self, level: int) -> AssembledSystem:
        n = self.dims[level]
        src = self.base_system
        sub = AssembledSystem(
            self.levels[level],
            src.state,
            src.quad,
            src.variant,
            src.M[:n, :n],
            src.A[:n, :n],
            src.C[:n, :n],
            src.Gamma[:n, :n],
            src.G_E[:n, :n],
            src.hessian_block[:n, :n],
            src.A_core[:n, :n],
            alpha=src.alpha,
            beta=self.beta,
            meta={"level": level},
        )
        return sub

    def level_first_order(self, level: int) -> FirstOrderSystem:
        return build_first_order(self.level_system(level))


def build_hierarchy(
    state: ReferenceState,
    n_levels: int,
    lmax0: int = 0,
    rorder0: int = 1,
    variant: str = "a2",
    radial_order: int = 16,
    spherical_margin: int = 4,
    include_fluid_toroidal: bool = False,
    schedule: list[tuple[int, int]] | None = None,
) -> Hierarchy:
    """Chain of nested spaces grown by alternating degree and radial-order
    increments (recorded in the schedule); an explicit monotone schedule may
    be supplied instead."""
    model = state.model
    if schedule is None:
        schedule = [(lmax0, rorder0)]
        lmax, rorder = lmax0, rorder0
        for j in range(1, n_levels):
            if j % 2 == 1:
                rorder += 1
            else:
                lmax += 1
            schedule.append((lmax, rorder))
    else:
        schedule = list(schedule)
        n_levels = len(schedule)
    levels = [build_basis(model, *schedule[0], include_fluid_toroidal=include_fluid_toroidal)]
    for lm, ro in schedule[1:]:
        levels.append(extend_basis(levels[-1], lm, ro))
    dims = [len(b) for b in levels]
    finest = levels[-1]
    sph = 2 * finest.lmax + spherical_margin
    quad = state_quadrature(state, radial_order, max(sph, 4))
    base = assemble(finest, state, quad, variant)
    quad2 = state_quadrature(state, 2 * radial_order, max(2 * sph, 4))
    ref = assemble(finest, state, quad2, variant)
    ensure_coercivity(ref)
    beta = ref.beta
    base.alpha, base.beta = ref.alpha, beta
    return Hierarchy(state, levels, dims, base, ref, beta, schedule)


def project_field_coefficients(system: AssembledSystem, profiles: dict) -> np.ndarray:
    """Mass-projection of a per-(l, m, family) polynomial field onto a basis.

    ``profiles[(l, m, family)]`` holds per-layer radial coefficients; used to
    produce smooth, representable initial data for convergence studies.
    """
    from numpy.polynomial import polynomial as P

    basis, quad = system.basis, system.quad
    model = basis.model
    b = np.zeros(len(basis))
    for i, fn in enumerate(basis.functions):
        prof = profiles.get((fn.l, fn.m, fn.family))
        if prof is None:
            continue
        acc = 0.0
        for k, lay in enumerate(model.layers):
            if k not in fn.shape.support:
                continue
            r, w = quad.layer_nodes(k)
            fu = P.polyval(r, np.asarray(prof[k], dtype=float))
            fi = fn.shape.value(r, k)
            acc += float(np.sum(w * lay.rho_at(r) * fu * fi * r**2))
        b[i] = acc
    return scipy.linalg.solve(system.M, b, assume_a="pos")


def project_initial(hier: Hierarchy, level: int, q_ref: np.ndarray, p_ref: np.ndarray):
    """Product-Gram orthogonal projection of reference-space initial data."""
    n = hier.dims[level]
    ref = hier.reference_system
    P = ref.A + hier.beta * ref.M
    M = ref.M
    q = scipy.linalg.solve(P[:n, :n], P[:n, :] @ q_ref, assume_a="pos")
    p = scipy.linalg.solve(M[:n, :n], M[:n, :] @ p_ref, assume_a="pos")
    return q, p


def restrict_forcing(hier: Hierarchy, level: int, forcing: Forcing) -> Forcing:
    """Dual vectors restrict to leading entries for nested prefix bases."""
    n = hier.dims[level]
    if forcing.kind == "zero":
        return forcing
    if forcing.kind in ("step", "impulse"):
        return Forcing(forcing.kind, forcing.vector[:n], forcing.t0, breakpoints=forcing.breakpoints)
    return Forcing.from_callable(lambda t: np.asarray(forcing.func(t))[:n], forcing.breakpoints)


def galerkin_solve(
    hier: Hierarchy,
    level: int,
    q_ref: np.ndarray,
    p_ref: np.ndarray,
    forcing: Forcing,
    t_grid,
    method: str = "modal",
) -> Trajectory:
    """Level dynamics with product-Gram-projected data and restricted forcing."""
    fos = hier.level_first_order(level)
    q0, p0 = project_initial(hier, level, q_ref, p_ref)
    return propagate(fos, q0, p0, restrict_forcing(hier, level, forcing), np.asarray(t_grid, float), method)


def energy_estimate_check(
    traj: Trajectory, fos: FirstOrderSystem, forcing: Forcing, beta: float
) -> dict:
    """Discrete counterpart of the Gronwall energy bound

        |W(t)|^2 <= C0 e^(C0 t) (|f|^2_{L2(0,t;H)} + |W(0)|^2).
    """
    kappa = float(scipy.linalg.eigvalsh(fos.M, fos.P)[-1])
    C0 = 1.0 + beta * max(kappa, 1.0)
    w0 = fos.hnorm2(traj.Q[0], traj.P[0])
    ok = True
    tight = 0.0
    fint = 0.0
    rows = []
    for i, t in enumerate(traj.times):
        if i > 0:
            a, b = traj.times[i - 1], traj.times[i]
            x, w = np.polynomial.legendre.leggauss(4)
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            for xi, wi in zip(x, w):
                F = forcing.sample(mid + half * xi, fos.n)
                fint += half * wi * fos.forcing_hnorm(F) ** 2
        lhs = fos.hnorm2(traj.Q[i], traj.P[i])
        rhs = C0 * math.exp(C0 * (t - traj.times[0])) * (fint + w0)
        rows.append((float(t), lhs, rhs))
        if rhs > 0:
            tight = max(tight, lhs / rhs)
        ok = ok and lhs <= rhs * (1 + 1e-9)
    return {"ok": ok, "tightness": tight, "C0": C0, "rows": rows}


def convergence_study(
    hier: Hierarchy,
    q_ref: np.ndarray,
    p_ref: np.ndarray,
    forcing: Forcing,
    t_grid,
    method: str = "modal",
    slack: float = 1.2,
) -> dict:
    """Max-over-time product-norm errors per level against the reference
    trajectory, with empirical decrease rates."""
    t_grid = np.asarray(t_grid, dtype=float)
    ref_sys = hier.reference_system
    ref_sys.beta = hier.beta
    fos_ref = build_first_order(ref_sys)
    traj_ref = propagate(fos_ref, q_ref, p_ref, forcing, t_grid, method)
    n_ref = hier.dims[-1]
    errors = []
    for level in range(len(hier.levels)):
        traj = galerkin_solve(hier, level, q_ref, p_ref, forcing, t_grid, method)
        worst = 0.0
        for i in range(len(t_grid)):
            dq = np.zeros(n_ref)
            dp = np.zeros(n_ref)
            nl = hier.dims[level]
            dq[:nl] = traj.Q[i]
            dp[:nl] = traj.P[i]
            dq -= traj_ref.Q[i]
            dp -= traj_ref.P[i]
            worst = max(worst, fos_ref.hnorm(dq, dp))
        errors.append(worst)
    rates = [
        math.log(errors[i] / errors[i + 1]) if errors[i + 1] > 0 and errors[i] > 0 else math.inf
        for i in range(len(errors) - 1)
    ]
    monotone = all(
        errors[i + 1] <= slack * errors[i] or errors[i + 1] < 1e-12 for i in range(len(errors) - 1)
    )
    # proxy self-consistency: finest level (base quadrature) vs reference
    traj_fin = galerkin_solve(hier, len(hier.levels) - 1, q_ref, p_ref, forcing, t_grid, method)
    self_err = max(
        fos_ref.hnorm(traj_fin.Q[i] - traj_ref.Q[i], traj_fin.P[i] - traj_ref.P[i]) for i in range(len(t_grid))
    )
    return {
        "dims": hier.dims,
        "errors": errors,
        "rates": rates,
        "monotone": monotone,
        "proxy_self_consistency": self_err,
        "schedule": hier.schedule,
    }


def weak_residual(traj: Trajectory, fos: FirstOrderSystem, forcing: Forcing) -> float:
    """Integrated weak-equation residual along a trajectory:

        M(qdot(b) - qdot(a)) + C(q(b) - q(a)) + A int q dt - int F dt = 0

    on consecutive grid intervals (trapezoid-in-time on the stored samples,
    Gauss on the forcing), scaled by the stiffness term.  Smooth trajectories
    on fine grids drive this to the time-quadrature floor."""
    worst = 0.0
    x, w = np.polynomial.legendre.leggauss(4)
    for i in range(len(traj.times) - 1):
        a, b = traj.times[i], traj.times[i + 1]
        half = 0.5 * (b - a)
        qint = half * (traj.Q[i] + traj.Q[i + 1])
        fint = np.zeros(fos.n)
        for xi, wi in zip(x, w):
            fint += half * wi * forcing.sample(0.5 * (a + b) + half * xi, fos.n)
        r = fos.M @ (traj.P[i + 1] - traj.P[i]) + fos.C @ (traj.Q[i + 1] - traj.Q[i]) + fos.A @ qint - fint
        scale = max(float(np.linalg.norm(fos.A @ qint)), 1e-30)
        worst = max(worst, float(np.linalg.norm(r)) / scale)
    return worst
