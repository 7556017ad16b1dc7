import numpy as np
import pytest
import scipy.linalg

from earthmodes.evolution import Forcing, propagate, build_first_order
from earthmodes.galerkin import (
    build_hierarchy,
    convergence_study,
    energy_estimate_check,
    galerkin_solve,
    project_field_coefficients,
    project_initial,
    weak_residual,
)


@pytest.fixture(scope="module")
def ball_hier(ball_state):
    return build_hierarchy(ball_state, n_levels=4, lmax0=0, rorder0=1, radial_order=12)


@pytest.fixture(scope="module")
def ball_hier_p(ball_state):
    """Radial-order growth at fixed degree (p-refinement of complete blocks)."""
    return build_hierarchy(
        ball_state, 0, radial_order=14, schedule=[(2, 2), (2, 3), (2, 4), (2, 5)]
    )




def test_hierarchy_nesting_and_dims(ball_hier):
    assert ball_hier.dims == sorted(ball_hier.dims)
    for a, b in zip(ball_hier.levels[:-1], ball_hier.levels[1:]):
        assert [f.uid for f in b.functions[: len(a)]] == [f.uid for f in a.functions]
    assert ball_hier.schedule[0] == (0, 1)


def test_level_exact_data_zero_error(ball_state):
    """With degree-only growth the coarse level spans complete (l, m) blocks,
    an invariant subspace of the nonrotating dynamics: data there stays there
    and every level reproduces the trajectory exactly."""
    hier = build_hierarchy(ball_state, 0, radial_order=12, schedule=[(0, 2), (1, 2), (2, 2)])
    sys0 = hier.level_system(0)
    w2, Z = scipy.linalg.eigh(sys0.A, sys0.M)
    k = int(np.argmax(w2 > 1e-8 * abs(w2).max()))
    n_ref = hier.dims[-1]
    q_ref = np.zeros(n_ref)
    q_ref[: hier.dims[0]] = Z[:, k]
    p_ref = np.zeros(n_ref)
    tg = np.linspace(0.0, 2.0, 9)
    study = convergence_study(hier, q_ref, p_ref, Forcing.zero(), tg)
    assert all(e <= 1e-10 for e in study["errors"])


def test_projection_is_orthogonal(ball_hier, rng):
    hier = ball_hier
    n_ref = hier.dims[-1]
    q_ref = rng.standard_normal(n_ref)
    p_ref = rng.standard_normal(n_ref)
    q0, p0 = project_initial(hier, 1, q_ref, p_ref)
    P = hier.reference_system.A + hier.beta * hier.reference_system.M
    M = hier.reference_system.M
    n = hier.dims[1]
    # residual orthogonal to the level in each block inner product
    rq = q_ref.copy()
    rq[:n] -= q0
    rp = p_ref.copy()
    rp[:n] -= p0
    assert np.max(np.abs((P @ rq)[:n])) < 1e-9 * np.abs(P @ q_ref).max()
    assert np.max(np.abs((M @ rp)[:n])) < 1e-9 * np.abs(M @ p_ref).max()


def test_convergence_monotone_smooth_data(ball_hier_p):
    """Smooth data: a degree-5 radial profile times one spherical harmonic."""
    hier = ball_hier_p
    profiles = {
        (2, 0, "radial"): [[0.0, 0.0, 1.0, -0.8, 0.0, 0.4]],
        (2, 0, "tangential"): [[0.0, 0.0, 0.7, 0.0, -0.3, 0.1]],
    }
    q_ref = project_field_coefficients(hier.reference_system, profiles)
    p_ref = np.zeros_like(q_ref)
    tg = np.linspace(0.0, 1.0, 9)
    study = convergence_study(hier, q_ref, p_ref, Forcing.zero(), tg)
    assert study["monotone"]
    assert all(e2 < e1 for e1, e2 in zip(study["errors"][:-1], study["errors"][1:]))
    assert study["proxy_self_consistency"] < 1e-6 * max(study["errors"][0], 1e-12)


def test_convergence_rough_data_logged_rates(ball_hier_p, rng):
    """Wiggly radial content: errors still decrease within the slack factor;
    empirical rates are reported, not asserted (no theoretical order)."""
    import math

    hier = ball_hier_p
    c = np.zeros(10)
    for k in range(0, 8):
        if k % 2 == 1:
            c[k + 2] = (-1) ** ((k - 1) // 2) * 3.0**k / math.factorial(k)
    smooth = {(2, 0, "radial"): [[0.0, 0.0, 1.0, -0.8, 0.0, 0.4]]}
    q_ref = project_field_coefficients(hier.reference_system, smooth)
    q_ref += 0.15 * project_field_coefficients(hier.reference_system, {(2, 0, "radial"): [c.tolist()]})
    tg = np.linspace(0.0, 1.0, 9)
    study = convergence_study(hier, q_ref, np.zeros_like(q_ref), Forcing.zero(), tg)
    assert study["monotone"]
    assert study["errors"][-1] < study["errors"][0]
    print("rough-data empirical rates:", [f"{r:.3f}" for r in study["rates"]])


def test_energy_estimate_with_and_without_forcing(ball_hier, rng):
    hier = ball_hier
    fos = hier.level_first_order(2)
    n = hier.dims[2]
    tg = np.linspace(0.0, 4.0, 17)
    q0 = rng.standard_normal(n)
    p0 = rng.standard_normal(n)
    traj = propagate(fos, q0, p0, Forcing.zero(), tg)
    rep = energy_estimate_check(traj, fos, Forcing.zero(), hier.beta)
    assert rep["ok"]
    if hier.beta == 0.0:
        # contraction case: |W(t)| <= |W(0)|
        w0 = fos.hnorm(q0, p0)
        assert all(fos.hnorm(traj.Q[i], traj.P[i]) <= w0 * (1 + 1e-9) for i in range(len(tg)))
    F = rng.standard_normal(n)
    forcing = Forcing.from_callable(lambda t: np.sin(3.0 * t) * F)
    traj2 = propagate(fos, q0, p0, forcing, tg)
    rep2 = energy_estimate_check(traj2, fos, forcing, hier.beta)
    assert rep2["ok"] and rep2["tightness"] <= 1.0 + 1e-9


def test_forcing_orthogonal_to_coarse_level(ball_hier):
    hier = ball_hier
    n0, n1 = hier.dims[0], hier.dims[1]
    n_ref = hier.dims[-1]
    F = np.zeros(n_ref)
    F[n0:n1] = 1.0  # supported strictly between level 0 and level 1
    forcing = Forcing.step(F, t0=0.0)
    tg = np.linspace(0.0, 2.0, 9)
    traj0 = galerkin_solve(hier, 0, np.zeros(n_ref), np.zeros(n_ref), forcing, tg)
    traj1 = galerkin_solve(hier, 1, np.zeros(n_ref), np.zeros(n_ref), forcing, tg)
    assert np.max(np.abs(traj0.Q)) < 1e-14
    assert np.max(np.abs(traj1.Q)) > 1e-6


def test_weak_equation_residual(ball_hier, rng):
    hier = ball_hier
    fos = hier.level_first_order(1)
    n = hier.dims[1]
    tg = np.linspace(0.0, 1.0, 201)
    q0 = rng.standard_normal(n)
    traj = propagate(fos, q0, np.zeros(n), Forcing.zero(), tg)
    # trapezoid-in-time check: second order in the grid spacing
    assert weak_residual(traj, fos, Forcing.zero()) < 5e-4


def test_energy_estimate_contraction_beta_zero(rng):
    """Genuine beta = 0 case: the Gronwall constant reduces and the trajectory
    contracts in the product norm."""
    from earthmodes.forms import ensure_coercivity, system_from_matrices

    sys_ = system_from_matrices(np.eye(4), np.diag([1.0, 2.0, 5.0, 9.0]))
    ensure_coercivity(sys_)
    assert sys_.beta == 0.0
    fos = build_first_order(sys_)
    q0 = rng.standard_normal(4)
    p0 = rng.standard_normal(4)
    tg = np.linspace(0.0, 6.0, 25)
    traj = propagate(fos, q0, p0, Forcing.zero(), tg)
    rep = energy_estimate_check(traj, fos, Forcing.zero(), 0.0)
    assert rep["ok"] and rep["C0"] == 1.0
    w0 = fos.hnorm(q0, p0)
    assert all(fos.hnorm(traj.Q[i], traj.P[i]) <= w0 * (1 + 1e-9) for i in range(len(tg)))
