"""Batch command-line front end.

Subcommands: model-check | assemble | coercivity | evolve | spectrum |
galerkin | volterra | source | gravity-test.  Exit status 0 on success, 2 on
a violated invariant, 1 on usage errors.  CSV bodies are deterministic for a
fixed config and seed; the manifest carries the config hash and versions.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .basis import build_basis
from .config import ConfigError, load_config
from .model import build_reference_state

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2


class InvariantViolation(RuntimeError):
    pass


def _common(sub):
    sub.add_argument("config", help="YAML model/run configuration")
    sub.add_argument("--variant", choices=("a2", "a3", "a4"), default=None)
    sub.add_argument("--lmax", type=int, default=None)
    sub.add_argument("--rorder", type=int, default=None)
    sub.add_argument("--T", type=float, default=None)
    sub.add_argument("--steps", type=int, default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out", default="out")
    sub.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="earthmodes", description=__doc__)
    sp = ap.add_subparsers(dest="command", required=True)
    for name in (
        "model-check",
        "assemble",
        "coercivity",
        "evolve",
        "spectrum",
        "galerkin",
        "volterra",
        "source",
        "gravity-test",
    ):
        _common(sp.add_parser(name))
    return ap


def _setup(args):
    rc = load_config(args.config)
    for attr, val in (
        ("variant", args.variant),
        ("lmax", args.lmax),
        ("radial_order", args.rorder),
        ("T", args.T),
        ("steps", args.steps),
        ("seed", args.seed),
    ):
        if val is not None:
            setattr(rc, attr, val)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return rc, out


def _state(rc):
    return build_reference_state(rc.model, rc.reference_resolution)


def _systems(rc, state, threads=1):
    from .forms import assemble, state_quadrature

    quad = state_quadrature(state, rc.quad_radial, rc.spherical_degree)
    basis = build_basis(rc.model, rc.lmax, rc.radial_order)
    return basis, quad, assemble(basis, state, quad, rc.variant)


def cmd_model_check(rc, out, args):
    state = _state(rc)
    res = state.equilibrium_residuals
    rows = [(k, i, v) for k in ("momentum_residual", "traction_jumps") for i, v in enumerate(res[k])]
    rows.append(("surface_pressure", 0, res["surface_pressure"]))
    rows.append(("parallelism_defect", 0, res["parallelism_defect"]))
    io.write_csv(out / "equilibrium_report.csv", ["quantity", "index", "value"], rows)
    xs = []
    for k, nodes in enumerate(state.nodes):
        lay = rc.model.layers[k]
        for r in nodes:
            n2 = state.n2[k][np.where(nodes == r)[0][0]] if lay.kind == "fluid" else float("nan")
            xs.append((r, lay.rho_at(r), float(state.p0[k](r)), float(state.g0[k](r)), float(state.phi0[k](r)), n2, k))
    io.write_csv(out / "reference_state.csv", ["r", "rho", "p0", "g0", "phi0", "N2", "layer_id"], xs)
    worst = max(res["momentum_residual"]) if res["momentum_residual"] else 0.0
    print(f"model-check: momentum residual {worst:.3e}, surface pressure {res['surface_pressure']:.3e}")
    if worst > 1e-6:
        raise InvariantViolation("hydrostatic equilibrium residual above 1e-6")
    return {"momentum_residual": worst}


def cmd_assemble(rc, out, args):
    state = _state(rc)
    basis, quad, system = _systems(rc, state)
    io.write_matrix(out / "mass.mtx", system.M, "symmetric")
    io.write_matrix(out / f"stiffness_{rc.variant}.mtx", system.A, "symmetric")
    io.write_matrix(out / "coriolis.mtx", system.C, "antisymmetric")
    io.write_matrix(out / "gravity.mtx", system.Gamma, "symmetric")
    io.write_matrix(out / "trial_gram.mtx", system.G_E, "symmetric")
    io.write_csv(out / "basis_manifest.csv", ["index", "l", "m", "family", "layers"], basis.manifest_rows())
    symA = np.linalg.norm(system.A - system.A.T) / max(np.linalg.norm(system.A), 1e-300)
    skewC = np.linalg.norm(system.C + system.C.T) / max(np.linalg.norm(system.C), 1e-300)
    print(f"assemble: dim {len(basis)}, |A-A'|/|A| = {symA:.2e}, |C+C'|/|C| = {skewC:.2e}")
    if symA > 1e-12 or skewC > 1e-12:
        raise InvariantViolation("assembled symmetry/antisymmetry invariant violated")
    return {"dim": len(basis)}


def cmd_coercivity(rc, out, args):
    from .forms import estimate_coercivity

    state = _state(rc)
    basis, quad, system = _systems(rc, state)
    res = estimate_coercivity(system)
    io.write_csv(out / "coercivity_scan.csv", ["beta", "alpha"], res.scanned)
    if not res.found:
        print("coercivity: no (alpha > 0, beta) in scan range; negative direction recorded")
        if res.negative_direction is not None:
            io.write_csv(
                out / "negative_direction.csv",
                ["index", "coefficient"],
                list(enumerate(res.negative_direction)),
            )
        raise InvariantViolation("coercivity scan failed")
    print(f"coercivity: alpha = {res.alpha:.6g} at beta = {res.beta:.6g} (stiffness min {res.stiffness_min:.3e})")
    return {"alpha": res.alpha, "beta": res.beta}


def _initial_data(rc, basis, system, seed):
    rng = np.random.default_rng(seed)
    n = len(basis)
    q0 = rng.standard_normal(n)
    p0 = rng.standard_normal(n)
    nrm = np.sqrt(q0 @ system.M @ q0 + p0 @ system.M @ p0)
    return q0 / nrm, p0 / nrm


def _forcing_from_config(rc, basis):
    from .evolution import Forcing

    if not rc.source:
        return Forcing.zero()
    from .source import from_fault, project_force, MomentTensor

    spec = rc.source
    origin = tuple(spec.get("origin", (0.0, 0.0, 0.5 * rc.model.radius)))
    t0 = float(spec.get("origin_time", 0.0))
    rise = spec.get("rise", "step")
    if "tensor" in spec:
        mt = MomentTensor(np.asarray(spec["tensor"], dtype=float), origin, t0, rise)
    else:
        mt = from_fault(spec["fault_normal"], spec["slip"], float(spec["moment"]), origin, t0, rise)
    return project_force(mt, basis)


def cmd_evolve(rc, out, args):
    from .evolution import build_first_order, propagate, trajectory_energy

    state = _state(rc)
    basis, quad, system = _systems(rc, state)
    fos = build_first_order(system)
    q0, p0 = _initial_data(rc, basis, system, rc.seed)
    forcing = _forcing_from_config(rc, basis)
    tg = np.linspace(0.0, rc.T, rc.steps + 1)
    traj = propagate(fos, q0, p0, forcing, tg, method="modal")
    E = trajectory_energy(traj, system)
    rows = [(t, e, *traj.Q[i]) for i, (t, e) in enumerate(zip(traj.times, E))]
    io.write_csv(out / "trajectory.csv", ["t", "energy", *[f"q{k}" for k in range(fos.n)]], rows)
    drift = float(np.max(np.abs(E - E[0])) / max(abs(E[0]), 1e-300))
    print(f"evolve: {len(tg)} samples, energy drift {drift:.3e} ({traj.method})")
    if forcing.kind == "zero" and rc.variant == "a2" and drift > 1e-8:
        raise InvariantViolation(f"energy drift {drift:.3e} above 1e-8 on unforced run")
    return {"energy_drift": drift}


def cmd_spectrum(rc, out, args):
    from .evolution import build_first_order, spectrum, spectrum_real_part_bound

    state = _state(rc)
    basis, quad, system = _systems(rc, state)
    fos = build_first_order(system)
    spec = spectrum(fos)
    rows = []
    for k, lam in enumerate(spec.eigenvalues):
        l, m, fam = spec.labels[k]
        part = max(spec.participation[k].values())
        rows.append((lam.real, lam.imag, l, m, fam, part))
    io.write_csv(out / "spectrum.csv", ["re_lambda", "im_lambda", "l", "m", "family", "participation"], rows)
    chk = spectrum_real_part_bound(fos, spec)
    print(f"spectrum: {len(rows)} eigenvalues, max |Re| = {chk['max_abs_re']:.3e} (c = {chk['c']:.3e})")
    if not chk["ok"]:
        raise InvariantViolation("eigenvalue real parts exceed the quasi-contraction constant")
    return {"max_abs_re": chk["max_abs_re"]}


def cmd_galerkin(rc, out, args):
    from .evolution import Forcing
    from .galerkin import build_hierarchy, convergence_study, project_field_coefficients

    state = _state(rc)
    L = min(rc.lmax, 2)
    k0 = max(rc.radial_order, L + 1)
    hier = build_hierarchy(
        state,
        0,
        variant=rc.variant,
        schedule=[(L, k0 + j) for j in range(4)],
    )
    rng = np.random.default_rng(rc.seed)
    # smooth representable data: a random low-degree radial profile per family
    nlay = len(rc.model.layers)
    prof = {}
    for fam in ("radial", "tangential") if L > 0 else ("radial",):
        c = np.zeros(6)
        c[max(L, 1) : max(L, 1) + 3] = rng.standard_normal(3)
        prof[(L, 0, fam)] = [c.tolist()] * nlay
    q0 = project_field_coefficients(hier.reference_system, prof)
    p0 = np.zeros_like(q0)
    tg = np.linspace(0.0, rc.T, max(rc.steps // 10, 8))
    study = convergence_study(hier, q0, p0, Forcing.zero(), tg)
    rows = [
        (lev, hier.dims[lev], study["errors"][lev], study["rates"][lev] if lev < len(study["rates"]) else "")
        for lev in range(len(hier.dims))
    ]
    io.write_csv(out / "galerkin_errors.csv", ["level", "dim", "max_error", "rate"], rows)
    print(f"galerkin: dims {hier.dims}, errors {[f'{e:.3e}' for e in study['errors']]}")
    if not study["monotone"]:
        raise InvariantViolation("level errors not decreasing within the slack factor")
    return {"errors": study["errors"]}


def cmd_volterra(rc, out, args):
    from .evolution import Forcing, build_first_order, propagate
    from .volterra import PerturbationPair, build_families, volterra_solve

    state = _state(rc)
    basis, quad, system = _systems(rc, state)
    sys3 = system.with_variant("a3")
    from .forms import ensure_coercivity

    ensure_coercivity(sys3)
    fam = build_families(sys3)
    pert = PerturbationPair(system.Gamma, system.C)
    q0, p0 = _initial_data(rc, basis, system, rc.seed)
    tg = np.linspace(0.0, rc.T, max(rc.steps // 4, 8))
    res = volterra_solve(fam, pert, q0, p0, Forcing.zero(), tg, truncation=10)
    sys2 = system.with_variant("a2")
    ensure_coercivity(sys2)
    fos2 = build_first_order(sys2)
    ref = propagate(fos2, q0, p0, Forcing.zero(), tg, method="modal")
    worst = max(
        fos2.hnorm(res.trajectory.Q[i] - ref.Q[i], res.trajectory.P[i] - ref.P[i]) for i in range(len(tg))
    )
    io.write_csv(
        out / "volterra_vs_direct.csv",
        ["t", "hnorm_difference"],
        [
            (tg[i], fos2.hnorm(res.trajectory.Q[i] - ref.Q[i], res.trajectory.P[i] - ref.P[i]))
            for i in range(len(tg))
        ],
    )
    from .volterra import reduced_model_error

    red = reduced_model_error(fam, pert, q0, p0, Forcing.zero(), np.linspace(0.0, min(rc.T, 2.0), 9))
    io.write_csv(
        out / "reduced_error.csv",
        ["t", "error_E", "bound"],
        [(float(t), float(e), red["bound"]) for t, e in zip(red["times"], red["error"])],
    )
    print(f"volterra: windows {res.windows}, max H-difference vs direct {worst:.3e}")
    if worst > 1e-5:
        raise InvariantViolation("split-solver trajectory deviates from direct propagation")
    return {"hnorm_difference": worst}


def cmd_source(rc, out, args):
    from .source import beachball_grid, beachball_text, from_fault, principal_axes, MomentTensor

    spec = rc.source or {"fault_normal": [1.0, 0.0, 0.0], "slip": [0.0, 1.0, 0.0], "moment": 1.0}
    if "tensor" in spec:
        mt = MomentTensor(np.asarray(spec["tensor"], dtype=float))
    else:
        mt = from_fault(spec["fault_normal"], spec["slip"], float(spec["moment"]))
    axes = principal_axes(mt)
    grid = beachball_grid(mt, 33)
    rows = []
    for i, y in enumerate(grid["y"]):
        for j, x in enumerate(grid["x"]):
            rows.append((x, y, int(grid["sign"][i, j])))
    io.write_csv(out / "beachball.csv", ["x", "y", "sign"], rows)
    (out / "beachball.txt").write_text(beachball_text(grid) + "\n")
    if axes.get("double_couple"):
        print(f"source: double couple, m0 = {axes['m0']:.6g}")
    else:
        print(f"source: non-double-couple input, defect {axes['defect']:.3e}")
    return {"m0": mt.m0}


def cmd_gravity_test(rc, out, args):
    from .forms import state_quadrature
    from .gravity import basis_shape_potentials, gravity_matrix, gravity_matrix_ibp, poisson_residual, apply_S

    state = _state(rc)
    quad = state_quadrature(state, rc.quad_radial, rc.spherical_degree)
    basis = build_basis(rc.model, rc.lmax, rc.radial_order)
    rng = np.random.default_rng(rc.seed)
    coefs = rng.standard_normal(len(basis))
    sol = apply_S(state, basis, coefs)
    resid = poisson_residual(sol)
    rows = sol.s_tables()
    io.write_csv(out / "potential_profiles.csv", ["l", "m", "r", "s", "ds_dr"], rows)
    with ThreadPoolExecutor(max_workers=max(args.threads, 1)) as pool:
        gam = pool.submit(gravity_matrix, basis, state, quad).result()
        gam_ibp = pool.submit(gravity_matrix_ibp, basis, state, quad).result()
    agree = float(np.abs(gam - gam_ibp).max() / max(np.abs(gam).max(), 1e-300))
    evmax = float(np.linalg.eigvalsh(gam)[-1])
    print(
        f"gravity-test: Poisson residual {resid['pde']:.3e}, route agreement {agree:.3e}, "
        f"max eig {evmax:.3e}"
    )
    if resid["pde"] > 1e-8 or agree > 1e-8:
        raise InvariantViolation("gravity operator invariants violated")
    return {"pde_residual": resid["pde"], "route_agreement": agree}


_COMMANDS = {
    "model-check": cmd_model_check,
    "assemble": cmd_assemble,
    "coercivity": cmd_coercivity,
    "evolve": cmd_evolve,
    "spectrum": cmd_spectrum,
    "galerkin": cmd_galerkin,
    "volterra": cmd_volterra,
    "source": cmd_source,
    "gravity-test": cmd_gravity_test,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        rc, out = _setup(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        summary = _COMMANDS[args.command](rc, out, args)
        io.write_manifest(out, rc.raw, rc.seed, {"command": args.command, "summary": summary})
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        io.write_manifest(out, rc.raw, rc.seed, {"command": args.command, "failed": str(exc)})
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
