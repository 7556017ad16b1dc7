import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earthmodes.geometry import ContractError
from earthmodes.model import DomainError
from earthmodes.source import (
    MomentTensor,
    beachball_grid,
    beachball_text,
    from_fault,
    principal_axes,
    project_force,
)

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


def random_fault_pair(seed):
    rng = np.random.default_rng(seed)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    d = rng.normal(size=3)
    d -= (d @ n) * n
    d /= np.linalg.norm(d)
    return n, d


def test_from_fault_basic():
    mt = from_fault(E1, E2, 1.0)
    assert np.allclose(mt.m, [[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    assert mt.m0 == pytest.approx(1.0, rel=1e-14)
    assert abs(np.trace(mt.m)) < 1e-14
    assert abs(np.linalg.det(mt.m)) < 1e-14


def test_scalar_moment_norm_identity():
    mt = from_fault(E1, E2, 5.0)
    assert np.linalg.norm(mt.m) == pytest.approx(math.sqrt(2.0) * 5.0, rel=1e-14)


def test_from_fault_contract_errors():
    with pytest.raises(ContractError):
        from_fault(E1, E1, 1.0)  # slip along the normal
    with pytest.raises(ContractError):
        from_fault(2.0 * E1, E2, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_double_couple_spectral_signature(seed):
    n, d = random_fault_pair(seed)
    m0 = 2.5
    mt = from_fault(n, d, m0)
    evals = np.sort(np.linalg.eigvalsh(mt.m))
    assert np.allclose(evals, [-m0, 0.0, m0], atol=1e-12 * m0)
    assert abs(np.sum(mt.m * mt.m) - 2.0 * m0**2) < 1e-10 * m0**2


def test_principal_axes_example():
    mt = from_fault(E1, E2, 1.0)
    ax = principal_axes(mt)
    assert ax["double_couple"]
    t, p, b = ax["t"], ax["p"], ax["b"]
    assert abs(abs(t @ ([1, 1, 0] / np.sqrt(2))) - 1) < 1e-12
    assert abs(abs(p @ ([1, -1, 0] / np.sqrt(2))) - 1) < 1e-12
    assert np.allclose(np.abs(b), [0, 0, 1], atol=1e-12)
    # eigen-relations and the axis cross-product convention
    assert np.allclose(mt.m @ t, ax["m0"] * t, atol=1e-12)
    assert np.allclose(mt.m @ p, -ax["m0"] * p, atol=1e-12)
    assert np.allclose(mt.m @ b, 0.0, atol=1e-12)
    assert np.allclose(np.cross(t, p), -b, atol=1e-12)


def test_principal_axes_orthogonality_random():
    for seed in range(5):
        n, d = random_fault_pair(seed)
        ax = principal_axes(from_fault(n, d, 1.0))
        assert abs(ax["t"] @ ax["p"]) < 1e-12
        assert abs(ax["t"] @ ax["b"]) < 1e-12
        assert abs(ax["p"] @ ax["b"]) < 1e-12


def test_non_double_couple_reports_defect():
    iso = MomentTensor(np.eye(3))
    out = principal_axes(iso)
    assert not out["double_couple"]
    assert out["defect"] > 0.1


def test_beachball_quadrants():
    mt = from_fault(E1, E2, 1.0)
    grid = beachball_grid(mt, 65)
    # nodal planes along the projected coordinate axes: sign = sign(x*y)-like
    # pattern in the frame (north = x, east = y)
    sgn = grid["sign"]
    xs, ys = grid["x"], grid["y"]
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            if x**2 + y**2 > 0.94 or abs(x) < 0.08 or abs(y) < 0.08:
                continue
            assert sgn[i, j] == (1 if x * y > 0 else -1)


def test_beachball_sign_balance_and_conjugate_invariance():
    n, d = random_fault_pair(12)
    g1 = beachball_grid(from_fault(n, d, 1.0), 65)
    g2 = beachball_grid(from_fault(d, n, 1.0), 65)  # conjugate fault plane
    assert np.array_equal(g1["sign"], g2["sign"])
    pos = int(np.sum(g1["sign"] > 0))
    neg = int(np.sum(g1["sign"] < 0))
    assert abs(pos - neg) <= 0.05 * (pos + neg)


def test_beachball_maximal_along_tension_axis():
    mt = from_fault(E1, E2, 1.0)
    t = principal_axes(mt)["t"]
    val = float(t @ mt.mhat @ t)
    # largest eigenvalue of the normalized tensor: m0 / (sqrt(2) m0)
    assert val == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-12)
    grid = beachball_grid(mt, 65)
    assert grid["value"].max() <= val + 1e-12


def test_beachball_resolution_contract_and_text():
    mt = from_fault(E1, E2, 1.0)
    with pytest.raises(ContractError):
        beachball_grid(mt, 8)
    txt = beachball_text(beachball_grid(mt, 17))
    assert "#" in txt and "o" in txt


def test_project_force_explosion_is_divergence(ball_basis):
    mt = MomentTensor(np.eye(3), origin=(0.3, 0.1, 0.2))
    forcing = project_force(mt, ball_basis)
    from earthmodes.basis import evaluate

    for k in (0, 5, len(ball_basis) - 1):
        _, g = evaluate(ball_basis.functions[k], np.array(mt.origin), ball_basis.model)
        assert forcing.vector[k] == pytest.approx(np.trace(g), abs=1e-12)


def test_project_force_finite_difference_consistency(ball_basis, rng):
    n, d = random_fault_pair(3)
    mt = from_fault(n, d, 1.0, origin=(0.25, -0.2, 0.35))
    forcing = project_force(mt, ball_basis)
    from earthmodes.basis import evaluate

    x = np.array(mt.origin)
    h = 1e-6
    for k in rng.integers(0, len(ball_basis), 5):
        grad = np.zeros((3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            vp, _ = evaluate(ball_basis.functions[k], x + e, ball_basis.model)
            vm, _ = evaluate(ball_basis.functions[k], x - e, ball_basis.model)
            grad[i] = (vp - vm) / (2 * h)
        expect = float(np.einsum("ij,ij->", mt.m, grad))
        assert forcing.vector[k] == pytest.approx(expect, abs=2e-6 * max(1, abs(expect)))


def test_project_force_toroidal_orthogonal_tensor(ball_basis):
    # a moment tensor aligned with rhat x gradient structure of a toroidal
    # function at its node gives zero pairing; use the explosion tensor on a
    # toroidal (divergence-free) function
    mt = MomentTensor(np.eye(3), origin=(0.0, 0.0, 0.4))
    forcing = project_force(mt, ball_basis)
    for k, f in enumerate(ball_basis.functions):
        if f.family == "toroidal":
            assert abs(forcing.vector[k]) < 1e-12


def test_project_force_interface_rejected(sfs_basis):
    with pytest.raises(DomainError):
        project_force(MomentTensor(np.eye(3), origin=(0.0, 0.0, 0.45)), sfs_basis)
    with pytest.raises(DomainError):
        project_force(MomentTensor(np.eye(3), origin=(0.0, 0.0, 1.0)), sfs_basis)


def test_step_and_impulse_rise(ball_basis):
    mt = MomentTensor(np.eye(3), origin=(0.3, 0.0, 0.0), origin_time=1.5, rise="impulse")
    forcing = project_force(mt, ball_basis)
    assert forcing.kind == "impulse" and forcing.t0 == 1.5
    mt2 = MomentTensor(np.eye(3), origin=(0.3, 0.0, 0.0), rise="step")
    assert project_force(mt2, ball_basis).kind == "step"
