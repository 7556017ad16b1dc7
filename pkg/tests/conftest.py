"""Shared desk-scale models and assembled systems (session scoped: assembly is
the expensive step, every suite reuses these)."""

import numpy as np
import pytest

from earthmodes.basis import build_basis
from earthmodes.forms import assemble, ensure_coercivity, state_quadrature
from earthmodes.model import EarthModel, Layer, build_reference_state


def make_ball(G=0.05, omega=(0.0, 0.0, 0.0), kappa=1.0, mu=1.0, rho=(1.0,)):
    return EarthModel(
        (Layer("solid", 0.0, 1.0, rho=rho, kappa=(kappa,), mu=(mu,)),),
        omega=omega,
        grav_const=G,
    )


def make_sfs(G=0.1, omega=(0.0, 0.0, 0.0)):
    """Solid/fluid/solid with a stably stratified fluid shell."""
    return EarthModel(
        (
            Layer("solid", 0.0, 0.45, rho=(1.2, -0.2), kappa=(2.0,), mu=(1.0,)),
            Layer("fluid", 0.45, 0.75, rho=(1.35, -0.6), gamma=(30.0,)),
            Layer("solid", 0.75, 1.0, rho=(0.9, -0.2), kappa=(2.0,), mu=(1.0,)),
        ),
        omega=omega,
        grav_const=G,
    )


def make_two_fluid(jump: float):
    """Solid core, two stratified fluid shells (interior fluid-fluid
    interface at r = 0.62), solid lid.

    ``jump`` is the outer-minus-inner fluid density step at the interface:
    negative keeps the density-jump sign hypothesis, positive violates it
    (heavier fluid on top).  Within each shell the profile decreases steeply
    enough to be convectively stable.
    """
    rho_in = (1.22, -0.3)
    v_at = 1.22 - 0.3 * 0.62
    rho_out = (v_at + jump + 0.3 * 0.62, -0.3)
    return EarthModel(
        (
            Layer("solid", 0.0, 0.4, rho=(1.4,), kappa=(2.0,), mu=(1.0,)),
            Layer("fluid", 0.4, 0.62, rho=rho_in, gamma=(60.0,)),
            Layer("fluid", 0.62, 0.85, rho=rho_out, gamma=(60.0,)),
            Layer("solid", 0.85, 1.0, rho=(0.8,), kappa=(2.0,), mu=(1.0,)),
        ),
        grav_const=0.15,
    )


def make_ocean():
    return EarthModel(
        (
            Layer("solid", 0.0, 0.85, rho=(1.1,), kappa=(2.0,), mu=(1.0,)),
            Layer("fluid", 0.85, 1.0, rho=(0.9,), gamma=(20.0,)),
        ),
        grav_const=0.1,
    )


def make_fluid_ball(G=0.2):
    return EarthModel((Layer("fluid", 0.0, 1.0, rho=(1.0,), gamma=(5.0 / 3.0,)),), grav_const=G)


@pytest.fixture(scope="session")
def ball_model():
    return make_ball()

@pytest.fixture(scope="session")
def ball_state(ball_model):
    return build_reference_state(ball_model, 64)


@pytest.fixture(scope="session")
def ball_quad(ball_state):
    return state_quadrature(ball_state, 12, 8)


@pytest.fixture(scope="session")
def ball_basis(ball_model):
    return build_basis(ball_model, 2, 3)


@pytest.fixture(scope="session")
def ball_system(ball_basis, ball_state, ball_quad):
    sys2 = assemble(ball_basis, ball_state, ball_quad, "a2")
    ensure_coercivity(sys2)
    return sys2


@pytest.fixture(scope="session")
def sfs_model():
    return make_sfs()


@pytest.fixture(scope="session")
def sfs_state(sfs_model):
    return build_reference_state(sfs_model, 96)


@pytest.fixture(scope="session")
def sfs_quad(sfs_state):
    return state_quadrature(sfs_state, 16, 8)


@pytest.fixture(scope="session")
def sfs_basis(sfs_model):
    return build_basis(sfs_model, 2, 3)


@pytest.fixture(scope="session")
def sfs_system(sfs_basis, sfs_state, sfs_quad):
    sys2 = assemble(sfs_basis, sfs_state, sfs_quad, "a2")
    ensure_coercivity(sys2)
    return sys2


@pytest.fixture(scope="session")
def rotating_ball_system(ball_state, ball_basis, ball_quad):
    sys2 = assemble(ball_basis, ball_state, ball_quad, "a2", omega=(0.0, 0.0, 0.2))
    ensure_coercivity(sys2)
    return sys2


@pytest.fixture()
def rng():
    # function-scoped: draws must not depend on test execution order
    return np.random.default_rng(20260810)
