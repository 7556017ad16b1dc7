import numpy as np
import pytest

from earthmodes.basis import (
    ConfigurationError,
    build_basis,
    evaluate,
    extend_basis,
    gram_condition,
    gram_matrices,
)
from earthmodes.forms import state_quadrature
from earthmodes.model import build_reference_state
from tests.conftest import make_ball, make_sfs


def test_lmax_zero_only_radial(ball_model):
    b = build_basis(ball_model, 0, 3)
    assert all(f.family == "radial" for f in b.functions)
    assert all(f.l == 0 for f in b.functions)


def test_dimension_equals_gram_rank(ball_basis, ball_state, ball_quad):
    M, G = gram_matrices(ball_basis, ball_state, ball_quad)
    assert np.linalg.matrix_rank(M, tol=1e-10) == len(ball_basis)
    # SPD via Cholesky certificates
    np.linalg.cholesky(M)
    np.linalg.cholesky(G)
    assert gram_condition(M) < 1e6


def test_origin_regularity_leading_power(ball_basis):
    for f in ball_basis.functions:
        if 0 not in f.shape.support:
            continue
        c = f.shape.coefs[0]
        m0 = max(f.l, 1) if f.family == "radial" else f.l
        assert np.all(np.abs(c[:m0]) < 1e-15)


def test_continuity_tags_and_jumps(sfs_model, sfs_basis):
    itfs = [i for i in sfs_model.interfaces if i.outer is not None]
    saw_tangential_jump = False
    for f in sfs_basis.functions:
        for k, itf in enumerate(itfs):
            r = itf.radius
            both = itf.inner in f.shape.support and itf.outer in f.shape.support
            vin = f.shape.value(r, itf.inner) if itf.inner in f.shape.support else 0.0
            vout = f.shape.value(r, itf.outer) if itf.outer in f.shape.support else 0.0
            if f.family == "radial":
                # normal component continuous across every interface
                assert abs(vin - vout) < 1e-12
                assert f.continuity[k] in ("full", "normal-only")
            elif both and itf.kind == "SS":
                assert abs(vin - vout) < 1e-12
                assert f.continuity[k] == "full"
            elif itf.kind in ("FF", "FS") and abs(vin - vout) > 1e-12 and f.family == "tangential":
                saw_tangential_jump = True
                assert f.continuity[k] == "none"
    assert saw_tangential_jump


def test_toroidal_absent_in_fluid_by_default(sfs_basis, sfs_model):
    fluid = [k for k, l in enumerate(sfs_model.layers) if l.kind == "fluid"]
    for f in sfs_basis.functions:
        if f.family == "toroidal":
            assert not set(fluid) & set(f.shape.support)


def test_nestedness_chain(sfs_model):
    b0 = build_basis(sfs_model, 1, 2)
    b1 = extend_basis(b0, 1, 3)
    b2 = extend_basis(b1, 2, 3)
    assert [f.uid for f in b1.functions[: len(b0)]] == [f.uid for f in b0.functions]
    assert [f.uid for f in b2.functions[: len(b1)]] == [f.uid for f in b1.functions]
    assert len(b2) > len(b1) > len(b0)
    with pytest.raises(ConfigurationError):
        extend_basis(b2, 1, 3)


def test_dimension_cap():
    with pytest.raises(ConfigurationError):
        build_basis(make_ball(), 4, 6, dimension_cap=10)


def test_evaluate_matches_finite_differences(ball_basis, rng):
    for f in [ball_basis.functions[i] for i in rng.integers(0, len(ball_basis), 8)]:
        x = rng.normal(size=3)
        x *= 0.57 / np.linalg.norm(x)
        v, g = evaluate(f, x, ball_basis.model)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            vp, _ = evaluate(f, x + e, ball_basis.model)
            vm, _ = evaluate(f, x - e, ball_basis.model)
            assert np.max(np.abs((vp - vm) / (2 * h) - g[i])) < 2e-6


def test_evaluate_toroidal_rigid_rotation(ball_basis):
    fn = next(
        f for f in ball_basis.functions if f.family == "toroidal" and f.l == 1 and f.m == 0
    )
    # its lowest shape has a linear radial profile on the origin layer
    x = np.array([0.3, -0.2, 0.4])
    v, g = evaluate(fn, x, ball_basis.model)
    # gradient antisymmetric for a rigid rotation when the profile is linear
    if abs(fn.shape.coefs[0][1]) > 0 and np.all(np.abs(fn.shape.coefs[0][2:]) < 1e-15):
        assert np.max(np.abs(g + g.T)) < 1e-12
        zxx = np.cross([0, 0, 1.0], x)
        assert abs(abs(v @ zxx) - np.linalg.norm(v) * np.linalg.norm(zxx)) < 1e-12


def test_evaluate_outside_support_zero(sfs_basis):
    fn = next(f for f in sfs_basis.functions if f.shape.support == (1,))
    v, g = evaluate(fn, np.array([0.0, 0.0, 0.2]), sfs_basis.model)
    assert np.all(v == 0) and np.all(g == 0)


def test_radial_l0_divergence(ball_basis, ball_state):
    # u = f(r) Y00 rhat with f = r has div = 3 Y00 = 3/sqrt(4 pi)
    fn = next(f for f in ball_basis.functions if f.l == 0)
    c = fn.shape.coefs[0]
    x = np.array([0.2, 0.1, -0.3])
    v, g = evaluate(fn, x, ball_basis.model)
    r = np.linalg.norm(x)
    f_val = np.polynomial.polynomial.polyval(r, c)
    df = np.polynomial.polynomial.polyval(r, np.polynomial.polynomial.polyder(c))
    expect = (df + 2 * f_val / r) / np.sqrt(4 * np.pi)
    assert np.trace(g) == pytest.approx(expect, rel=1e-12)


def test_mass_gram_closed_form(ball_state, ball_quad):
    # l = 0 block: entries are rho * int f_a f_b r^2 dr (times the unit Y00 norm)
    b = build_basis(ball_state.model, 0, 2)
    M, _ = gram_matrices(b, ball_state, ball_quad)
    P = np.polynomial.polynomial
    for i, fi in enumerate(b.functions):
        for j, fj in enumerate(b.functions):
            prod = P.polymul(P.polymul(fi.shape.coefs[0], fj.shape.coefs[0]), [0, 0, 1.0])
            exact = P.polyval(1.0, P.polyint(prod))
            assert M[i, j] == pytest.approx(exact, abs=1e-12)


def test_mass_block_diagonal_in_lm(ball_basis, ball_state, ball_quad):
    M, G = gram_matrices(ball_basis, ball_state, ball_quad)
    for i, fi in enumerate(ball_basis.functions):
        for j, fj in enumerate(ball_basis.functions):
            if (fi.l, fi.m) != (fj.l, fj.m):
                assert M[i, j] == 0.0
                assert G[i, j] == 0.0


def test_gram_refuses_underresolved_quadrature(ball_basis, ball_state):
    from earthmodes.geometry import build_quadrature

    bad = build_quadrature(ball_state.model.layer_breaks, 2, 8)
    with pytest.raises(ConfigurationError):
        gram_matrices(ball_basis, ball_state, bad)


def test_manifest_rows(ball_basis):
    rows = list(ball_basis.manifest_rows())
    assert len(rows) == len(ball_basis)
    assert rows[0][0] == 0
