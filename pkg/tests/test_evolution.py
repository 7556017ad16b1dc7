import math

import numpy as np
import pytest
import scipy.linalg

from earthmodes.evolution import (
    Forcing,
    ResolventRejection,
    adjoint_check,
    build_first_order,
    dissipativity_bound,
    propagate,
    resolvent_solve,
    resolvent_threshold,
    semigroup_bound_check,
    spectrum,
    spectrum_real_part_bound,
    trajectory_energy,
)
from earthmodes.forms import ensure_coercivity, system_from_matrices


@pytest.fixture(scope="module")
def ball_fos(ball_system):
    return build_first_order(ball_system)


@pytest.fixture(scope="module")
def rot_fos(rotating_ball_system):
    return build_first_order(rotating_ball_system)


def scalar_system(omega2=4.0, beta=0.0):
    sys_ = system_from_matrices([[1.0]], [[omega2]])
    ensure_coercivity(sys_)
    if beta:
        sys_.beta = beta
    return build_first_order(sys_)


def test_blocks(ball_fos, rng):
    q = rng.standard_normal(ball_fos.n)
    tq, tp = ball_fos.apply_block(q, np.zeros_like(q))
    assert np.all(tq == 0)
    want = -scipy.linalg.cho_solve(ball_fos.cho_M, ball_fos.A @ q)
    assert np.allclose(tp, want, atol=1e-12)
    # product Gram factorization succeeded at construction
    assert ball_fos.P.shape == ball_fos.M.shape


def test_zero_rotation_lower_right_block(ball_fos, rng):
    q = rng.standard_normal(ball_fos.n)
    p = rng.standard_normal(ball_fos.n)
    _, tp = ball_fos.apply_block(np.zeros_like(q), p)
    assert np.allclose(tp, 0.0, atol=1e-14)


def test_dissipativity_identity_and_bound(rot_fos):
    rep = dissipativity_bound(rot_fos, n_samples=1000)
    assert rep["identity_residual"] <= 1e-12
    assert rep["c_measured"] <= rep["c_exact"] * (1 + 1e-9) + 1e-14


def test_dissipativity_beta_zero(ball_fos):
    if ball_fos.beta == 0.0:
        rep = dissipativity_bound(ball_fos, n_samples=200)
        assert abs(rep["c_measured"]) <= 1e-12


def test_dissipativity_q_only_state(rot_fos, rng):
    q = rng.standard_normal(rot_fos.n)
    p = np.zeros_like(q)
    tq, tp = rot_fos.apply_block(q, p)
    assert abs(rot_fos.hdot(tq, tp, q, p)) <= 1e-12 * rot_fos.hnorm2(q, p)


def test_resolvent_round_trip(rot_fos, rng):
    cbar = resolvent_threshold(rot_fos)
    lam = 2.0 * cbar if cbar > 0 else 1.0
    q0 = rng.standard_normal(rot_fos.n)
    p0 = rng.standard_normal(rot_fos.n)
    tq, tp = rot_fos.apply_block(q0, p0)
    sol = resolvent_solve(rot_fos, lam, lam * q0 - tq, lam * p0 - tp)
    assert np.max(np.abs(sol["q"] - q0)) < 1e-10 * max(np.abs(q0).max(), 1)
    assert sol["residual"] < 1e-10
    assert sol["schur_condition"] < 1e12


def test_resolvent_rejects_below_threshold(rot_fos, rng):
    cbar = resolvent_threshold(rot_fos)
    assert cbar > 0
    with pytest.raises(ResolventRejection):
        resolvent_solve(rot_fos, 0.5 * cbar, rng.standard_normal(rot_fos.n), rng.standard_normal(rot_fos.n))


def test_resolvent_spd_case(ball_fos, rng):
    # beta = 0, no rotation: any positive shift works
    sol = resolvent_solve(ball_fos, 0.7, rng.standard_normal(ball_fos.n), rng.standard_normal(ball_fos.n))
    assert sol["residual"] < 1e-10


def test_harmonic_oscillator_closed_form():
    fos = scalar_system(omega2=4.0)
    tg = np.linspace(0.0, 7.0, 141)
    traj = propagate(fos, np.array([1.0]), np.array([0.0]), Forcing.zero(), tg)
    assert np.max(np.abs(traj.Q[:, 0] - np.cos(2.0 * tg))) < 1e-12


def test_eigenvector_trajectory_is_exact_mode(ball_fos, ball_system):
    w2, Z = scipy.linalg.eigh(ball_system.A, ball_system.M)
    k = np.argmax(w2 > 1e-6)
    omega = math.sqrt(w2[k])
    tg = np.linspace(0.0, 3.0, 31)
    traj = propagate(ball_fos, Z[:, k], np.zeros(ball_fos.n), Forcing.zero(), tg)
    expect = np.outer(np.cos(omega * tg), Z[:, k])
    assert np.max(np.abs(traj.Q - expect)) < 1e-10


def test_modal_vs_rk_with_step_forcing(ball_fos, rng):
    n = ball_fos.n
    F = rng.standard_normal(n)
    forcing = Forcing.step(F, t0=0.4)
    tg = np.linspace(0.0, 4.0, 41)
    q0 = rng.standard_normal(n)
    p0 = rng.standard_normal(n)
    tm = propagate(ball_fos, q0, p0, forcing, tg, method="modal")
    tr = propagate(ball_fos, q0, p0, forcing, tg, method="rk")
    scale = ball_fos.hnorm(q0, p0)
    worst = max(
        ball_fos.hnorm(tm.Q[i] - tr.Q[i], tm.P[i] - tr.P[i]) for i in range(len(tg))
    )
    assert worst < 1e-7 * scale


def test_energy_conservation_modal_and_rk(ball_fos, ball_system, rng):
    w2 = scipy.linalg.eigh(ball_system.A, ball_system.M, eigvals_only=True)
    wmin = math.sqrt(min(x for x in w2 if x > 1e-8 * abs(w2).max()))
    T = 10.0 * 2.0 * math.pi / wmin
    tg = np.linspace(0.0, T, 64)
    q0 = rng.standard_normal(ball_fos.n)
    p0 = rng.standard_normal(ball_fos.n)
    tm = propagate(ball_fos, q0, p0, Forcing.zero(), tg, method="modal")
    E = trajectory_energy(tm, ball_system)
    assert np.max(np.abs(E - E[0])) <= 1e-8 * abs(E[0])
    tr = propagate(ball_fos, q0, p0, Forcing.zero(), tg, method="rk")
    Er = trajectory_energy(tr, ball_system)
    assert np.max(np.abs(Er - Er[0])) <= 1e-6 * abs(Er[0])


def test_energy_constant_with_rotation_rigid_start(rot_fos, rotating_ball_system):
    basis = rotating_ball_system.basis
    # rigid-rotation initial data: toroidal l=1, m=0, linear shape
    q0 = np.zeros(rot_fos.n)
    for i, f in enumerate(basis.functions):
        if f.family == "toroidal" and f.l == 1 and f.m == 0:
            c = f.shape.coefs[0]
            if abs(c[1]) > 0 and np.all(np.abs(c[2:]) < 1e-15):
                q0[i] = 1.0
                break
    assert np.any(q0)
    tg = np.linspace(0.0, 5.0, 26)
    traj = propagate(rot_fos, q0, np.zeros_like(q0), Forcing.zero(), tg, method="rk")
    E = trajectory_energy(traj, rotating_ball_system)
    scale = float(q0 @ rotating_ball_system.M @ q0)
    assert np.max(np.abs(E - E[0])) <= 1e-8 * scale


def test_energy_zero_state(ball_fos, ball_system):
    tg = np.linspace(0.0, 1.0, 5)
    traj = propagate(ball_fos, np.zeros(ball_fos.n), np.zeros(ball_fos.n), Forcing.zero(), tg)
    assert np.all(trajectory_energy(traj, ball_system) == 0.0)


def test_semigroup_bound_contraction_and_impulse(ball_fos, rng):
    tg = np.linspace(0.0, 6.0, 25)
    q0 = rng.standard_normal(ball_fos.n)
    p0 = rng.standard_normal(ball_fos.n)
    traj = propagate(ball_fos, q0, p0, Forcing.zero(), tg)
    rep = semigroup_bound_check(traj, ball_fos)
    assert rep["ok"]
    imp = Forcing.impulse(rng.standard_normal(ball_fos.n), t0=0.5)
    traj2 = propagate(ball_fos, q0, p0, imp, tg)
    rep2 = semigroup_bound_check(traj2, ball_fos)
    assert rep2["ok"] and 0 < rep2["tightness"] <= 1 + 1e-9


def test_semigroup_bound_rotating_beta(rot_fos, rng):
    tg = np.linspace(0.0, 5.0, 21)
    traj = propagate(
        rot_fos, rng.standard_normal(rot_fos.n), rng.standard_normal(rot_fos.n), Forcing.zero(), tg, method="rk"
    )
    rep = semigroup_bound_check(traj, rot_fos)
    assert rep["ok"]


def test_spectrum_nonrotating_imaginary(ball_fos):
    spec = spectrum(ball_fos)
    scale = np.abs(spec.eigenvalues).max()
    assert np.max(np.abs(spec.eigenvalues.real)) <= 1e-10 * scale
    chk = spectrum_real_part_bound(ball_fos, spec)
    assert chk["ok"]


def test_spectrum_null_rotation_mode_nongravitating():
    from earthmodes.basis import build_basis
    from earthmodes.forms import assemble, state_quadrature
    from earthmodes.model import build_reference_state
    from tests.conftest import make_ball

    model = make_ball(G=0.0)
    state = build_reference_state(model, 32)
    quad = state_quadrature(state, 10, 6)
    basis = build_basis(model, 1, 2)
    system = assemble(basis, state, quad, "a2")
    ensure_coercivity(system)
    fos = build_first_order(system)
    # the rigid-rotation coefficient vector lies in the stiffness null space
    q0 = np.zeros(len(basis))
    for i, f in enumerate(basis.functions):
        if f.family == "toroidal" and f.l == 1 and f.m == 0 and abs(f.shape.coefs[0][1]) > 0:
            if np.all(np.abs(f.shape.coefs[0][2:]) < 1e-14):
                q0[i] = 1.0
    resid = np.abs(system.A @ q0).max()
    assert resid < 1e-10 * np.abs(system.A).max()
    spec = spectrum(fos)
    n_zero = np.sum(np.abs(spec.eigenvalues) < 1e-8)
    assert n_zero >= 2  # the neutral rotation shows up as omega = 0


def test_spectrum_rotating_bound_and_zeeman(ball_state, ball_basis, ball_quad):
    from earthmodes.forms import assemble

    base = assemble(ball_basis, ball_state, ball_quad, "a2")
    ensure_coercivity(base)
    w2, Z = scipy.linalg.eigh(base.A, base.M)
    live = w2 > 1e-8 * abs(w2).max()
    wmin = math.sqrt(w2[live].min())
    Om = 0.01 * wmin
    rot = assemble(ball_basis, ball_state, ball_quad, "a2", omega=(0.0, 0.0, Om))
    ensure_coercivity(rot)
    fos = build_first_order(rot)
    spec = spectrum(fos)
    chk = spectrum_real_part_bound(fos, spec)
    assert chk["ok"]
    # first-order splitting oracle: project the quadratic pencil onto each
    # unperturbed degenerate eigenspace and compare eigenvalues to 5% of the
    # splitting magnitude
    lam_all = spec.eigenvalues
    groups = {}
    for k in range(len(w2)):
        if not live[k]:
            continue
        key = round(math.sqrt(w2[k]) / wmin, 6)
        groups.setdefault(key, []).append(k)
    checked = 0
    for key, idxs in groups.items():
        if len(idxs) < 2 or checked >= 3:
            continue
        X = Z[:, idxs]
        Msub = X.T @ rot.M @ X
        Csub = X.T @ rot.C @ X
        Asub = X.T @ rot.A @ X
        nn = len(idxs)
        K = np.zeros((2 * nn, 2 * nn))
        K[:nn, nn:] = np.eye(nn)
        K[nn:, :nn] = -Asub
        K[nn:, nn:] = -Csub
        B = np.eye(2 * nn)
        B[nn:, nn:] = Msub
        lam_small = scipy.linalg.eig(K, B, right=False)
        w0 = math.sqrt(w2[idxs[0]])
        pred = np.sort(lam_small.imag[lam_small.imag > 0])
        got = np.sort([x.imag for x in lam_all if x.imag > 0 and abs(x.imag - w0) < 10 * Om])
        if len(got) != len(pred):
            continue
        split_scale = max(pred.max() - pred.min(), Om * 1e-3)
        assert np.max(np.abs(np.asarray(got) - pred)) <= 0.05 * max(split_scale, Om)
        checked += 1
    assert checked >= 1


def test_adjoint_identities(rot_fos, ball_fos):
    rep = adjoint_check(rot_fos)
    assert rep["residual"] <= 1e-10
    # beta = 0, no rotation: adjoint is minus the block operator
    rep0 = adjoint_check(ball_fos)
    assert rep0["residual"] <= 1e-10
    if ball_fos.beta == 0.0:
        assert rep0["skew_residual"] <= 1e-10


def test_adjoint_consistent_with_dissipativity(rot_fos, rng):
    rep = adjoint_check(rot_fos)
    n = rot_fos.n
    T = np.zeros((2 * n, 2 * n))
    Minv = scipy.linalg.cho_solve(rot_fos.cho_M, np.eye(n))
    T[:n, n:] = np.eye(n)
    T[n:, :n] = -Minv @ rot_fos.A
    T[n:, n:] = -Minv @ rot_fos.C
    sym = 0.5 * (T + rep["numeric"])
    Gram = np.zeros((2 * n, 2 * n))
    Gram[:n, :n] = rot_fos.P
    Gram[n:, n:] = rot_fos.M
    for _ in range(5):
        U = rng.standard_normal(2 * n)
        lhs = float(U @ Gram @ (T @ U))
        rhs = float(U @ Gram @ (sym @ U))
        assert abs(lhs - rhs) <= 1e-9 * float(U @ Gram @ U) * max(1.0, np.abs(T).max())


def test_rotating_modal_falls_back_when_defective(rot_fos, rng):
    """The rotating ball carries exact neutral rotations; whether or not the
    companion pencil diagonalizes cleanly, modal propagation must agree with
    the independent integrator (falling back with a warning if defective)."""
    q0 = rng.standard_normal(rot_fos.n)
    p0 = rng.standard_normal(rot_fos.n)
    tg = np.linspace(0.0, 2.0, 9)
    tm = propagate(rot_fos, q0, p0, Forcing.zero(), tg, method="modal")
    tr = propagate(rot_fos, q0, p0, Forcing.zero(), tg, method="rk")
    if tm.method == "rk":
        assert "warning" in tm.meta
    worst = max(rot_fos.hnorm(tm.Q[i] - tr.Q[i], tm.P[i] - tr.P[i]) for i in range(len(tg)))
    assert worst <= 1e-6 * rot_fos.hnorm(q0, p0)
