"""Point-source representation: moment tensors from fault geometry, principal
axes, equal-area sign grids ("beach balls"), and projection of the equivalent
body force onto a trial space.

The force density of a step-rise point source is

    f_j(x, t) = -M_ij d_i delta(x - xs) H(t - ts),

so the pairing with a trial function phi moves the derivative over:
F_k(t) = M_ij d_i phi_{k,j}(xs) H(t - ts).  (The projected vector is the
H-dual pairing of the force density; the density weight of the equations of
motion is already carried by the mass matrix.)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import BasisSet, evaluate
from .evolution import Forcing
from .geometry import ContractError
from .model import DomainError


@dataclass(frozen=True)
class MomentTensor:
    m: np.ndarray  # symmetric 3x3
    origin: tuple = (0.0, 0.0, 0.0)
    origin_time: float = 0.0
    rise: str = "step"  # 'step' | 'impulse'

    def __post_init__(self):
        mm = np.asarray(self.m, dtype=float)
        if mm.shape != (3, 3) or not np.allclose(mm, mm.T, atol=1e-12 * max(np.abs(mm).max(), 1)):
            raise ContractError("moment tensor must be symmetric 3x3")

    @property
    def m0(self) -> float:
        """Scalar moment |M| / sqrt(2)."""
        return float(np.sqrt(np.sum(self.m * self.m) / 2.0))

    @property
    def mhat(self) -> np.ndarray:
        return self.m / (math.sqrt(2.0) * self.m0)


def from_fault(n, d, m0: float, origin=(0.0, 0.0, 0.0), origin_time: float = 0.0, rise: str = "step") -> MomentTensor:
    """Double couple from unit fault normal and unit slip (slip in-plane)."""
    n = np.asarray(n, dtype=float)
    d = np.asarray(d, dtype=float)
    for v, name in ((n, "normal"), (d, "slip")):
        if abs(np.linalg.norm(v) - 1.0) > 1e-10:
            raise ContractError(f"fault {name} must be a unit vector")
    if abs(float(n @ d)) > 1e-10:
        raise ContractError("slip vector must lie in the fault plane (n . d = 0)")
    m = m0 * (np.outer(n, d) + np.outer(d, n))
    return MomentTensor(m, tuple(origin), origin_time, rise)


def principal_axes(mt: MomentTensor, tol: float = 1e-8) -> dict:
    """Tension/pressure/null axes of a double couple.

    Non-double-couple input returns the eigen-decomposition with a defect
    measure instead of axes.
    """
    m = mt.m
    scale = float(np.abs(m).max()) or 1.0
    evals, evecs = np.linalg.eigh(m)
    # sorted ascending: p (most negative), b, t
    defect = (abs(float(np.trace(m))) + abs(evals[1])) / scale
    if defect > tol:
        return {"double_couple": False, "defect": defect, "eigenvalues": evals, "eigenvectors": evecs}
    t = evecs[:, 2]
    p = evecs[:, 0]
    b = evecs[:, 1]
    # orient b = t x p / |..| convention: eps t p / 2 = -b
    b_oriented = -0.5 * np.cross(t, p) * 2.0 / max(np.linalg.norm(np.cross(t, p)), 1e-300)
    return {
        "double_couple": True,
        "t": t,
        "p": p,
        "b": b_oriented,
        "m0": float(evals[2]),
        "eigenvalues": evals,
        "defect": defect,
    }


def beachball_grid(mt: MomentTensor, resolution: int = 64, frame=None) -> dict:
    """Sign of nu' Mhat nu on the lower focal hemisphere, Lambert equal-area.

    frame: rows (up, north, east); defaults to the global axes z, x, y.
    Cells outside the unit disk carry sign 0.
    """
    if resolution < 16:
        raise ContractError("resolution must be >= 16")
    if frame is None:
        up = np.array([0.0, 0.0, 1.0])
        north = np.array([1.0, 0.0, 0.0])
        east = np.array([0.0, 1.0, 0.0])
    else:
        up, north, east = (np.asarray(v, dtype=float) for v in frame)
    mhat = mt.mhat
    xs = np.linspace(-1.0, 1.0, resolution)
    ys = np.linspace(-1.0, 1.0, resolution)
    sign = np.zeros((resolution, resolution), dtype=int)
    vals = np.zeros((resolution, resolution))
    for i, y in enumerate(ys):  # row index: north coordinate
        for j, x in enumerate(xs):
            rho = math.hypot(x, y)
            if rho > 1.0:
                continue
            theta = 2.0 * math.asin(min(rho / math.sqrt(2.0), 1.0))
            psi = math.atan2(x, y)  # from north, clockwise toward east
            nu = -math.cos(theta) * up + math.sin(theta) * (math.cos(psi) * north + math.sin(psi) * east)
            v = float(nu @ mhat @ nu)
            vals[i, j] = v
            sign[i, j] = 1 if v > 0 else (-1 if v < 0 else 0)
    return {"x": xs, "y": ys, "sign": sign, "value": vals}


def beachball_text(grid: dict) -> str:
    rows = []
    for i in range(len(grid["y"]) - 1, -1, -1):
        row = []
        for j in range(len(grid["x"])):
            s = grid["sign"][i, j]
            row.append("#" if s > 0 else ("o" if s < 0 else " "))
        rows.append("".join(row))
    return "\n".join(rows)


def project_force(mt: MomentTensor, basis: BasisSet) -> Forcing:
    """Generalized forcing of the equivalent point force on the basis.

    F_k(t) = M_ij d_i phi_{k,j}(xs) * rise(t).  The source must lie strictly
    inside a layer (one-sided gradients are ambiguous on interfaces).
    """
    xs = np.asarray(mt.origin, dtype=float)
    r = float(np.linalg.norm(xs))
    model = basis.model
    breaks = model.layer_breaks
    if r <= 0 or r >= model.radius - 1e-12 * model.radius:
        raise DomainError("source must lie strictly inside the model")
    if np.any(np.abs(breaks - r) < 1e-10 * model.radius):
        raise DomainError("source on an interface: gradient is side-ambiguous")
    vec = np.zeros(len(basis))
    for k in range(len(basis)):
        _, grad = evaluate(basis.functions[k], xs, model)
        vec[k] = float(np.einsum("ij,ij->", mt.m, grad))
    if mt.rise == "impulse":
        return Forcing.impulse(vec, mt.origin_time)
    return Forcing.step(vec, mt.origin_time)
