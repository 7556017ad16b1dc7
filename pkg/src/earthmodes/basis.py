"""E-conforming trial spaces: real vector spherical harmonics times per-layer
radial polynomials with interface-matched continuity.

Continuity by construction:
  * across solid-solid interfaces all components are continuous,
  * across fluid-fluid / fluid-solid interfaces only the normal (radial
    family) component is matched; tangential families restart per block,
  * at r = 0 radial shapes vanish to order max(l, 1) (radial family) or l
    (tangential/toroidal), keeping gradients square-integrable.

Radial shapes are hierarchical p-FEM polynomials: end/junction hats plus
interior Legendre bubbles, so raising the order appends shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .geometry import QuadratureRule
from .harmonics import HarmonicTable, degree_orders, solid_harmonic
from .kernels import eval_radial_piecewise
from .model import EarthModel, ReferenceState

FAMILIES = ("radial", "tangential", "toroidal")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RadialShape:
    support: tuple[int, ...]
    coefs: np.ndarray  # (n_layers, maxdeg+1), zero rows outside support

    def value(self, r, layer: int):
        return P.polyval(r, self.coefs[layer])

    def deriv(self, r, layer: int):
        return P.polyval(r, P.polyder(self.coefs[layer]))


@dataclass(frozen=True)
class BasisFunction:
    l: int
    m: int
    family: str
    shape: RadialShape
    continuity: tuple  # per internal interface: 'full' | 'normal-only' | 'none'
    uid: tuple

    @property
    def k(self) -> float:
        return math.sqrt(self.l * (self.l + 1))


def _poly_affine(cxi: np.ndarray, a: float, b: float) -> np.ndarray:
    """Compose p(xi) with xi = (2r - a - b)/(b - a); return coefficients in r."""
    alpha = -(a + b) / (b - a)
    beta = 2.0 / (b - a)
    res = np.array([cxi[-1]])
    for c in cxi[-2::-1]:
        res = P.polyadd(P.polymul(res, [alpha, beta]), [c])
    return res


def _legendre_poly(j: int) -> np.ndarray:
    c = np.zeros(j + 1)
    c[j] = 1.0
    return np.polynomial.legendre.leg2poly(c)


def _bubble_xi(j: int) -> np.ndarray:
    """Lobatto bubble of degree j+1 on [-1, 1]; vanishes at both ends."""
    c = P.polysub(_legendre_poly(j + 1), _legendre_poly(j - 1))
    return c / math.sqrt(2.0 * (2.0 * j + 1.0))


def _block_shapes(model: EarthModel, layers: list[int], order: int, m0: int, maxdeg: int):
    """Ordered radial DOFs of one continuity block.

    Returns a list of (uid_tail, coefs) with coefs shaped (n_layers, maxdeg+1).
    Order: nodal DOFs inside-out, then bubbles by (degree index, element).
    """
    n_lay = len(model.layers)
    breaks = model.layer_breaks
    origin = breaks[layers[0]] == 0.0

    def empty():
        return np.zeros((n_lay, maxdeg + 1))

    def put(coefs, layer, poly):
        p = np.asarray(poly, dtype=float)
        coefs[layer, : len(p)] += p

    shapes = []
    nodes = [breaks[k] for k in layers] + [breaks[layers[-1] + 1]]
    # nodal DOFs: value 1 at one node, 0 at the others, linear hats
    # (origin node excluded; origin element uses the t^m0 connector instead)
    for j, rn in enumerate(nodes):
        if j == 0 and origin:
            continue
        c = empty()
        if j > 0:
            a, b = nodes[j - 1], nodes[j]
            lay = layers[j - 1]
            if a == 0.0:
                put(c, lay, [0.0] * m0 + [b ** (-m0)])  # connector t^m0
            else:
                put(c, lay, [-a / (b - a), 1.0 / (b - a)])
        if j < len(nodes) - 1:
            a, b = nodes[j], nodes[j + 1]
            put(c, layers[j], [b / (b - a), -1.0 / (b - a)])
        shapes.append((("node", j), c))
    # bubbles
    for jb in range(1, order):
        for e, lay in enumerate(layers):
            a, b = nodes[e], nodes[e + 1]
            if a == 0.0:
                jdeg = m0 + jb
                if jdeg > order:
                    continue
                # t^m0 (P_jb(2t-1) - P_jb(1)), t = r/b
                leg = _legendre_poly(jb)
                inner = P.polysub(_poly_affine(leg, 0.0, b), [P.polyval(1.0, leg)])
                poly = P.polymul([0.0] * m0 + [b ** (-m0)], inner)
                c = empty()
                put(c, lay, poly)
                shapes.append((("bubble0", jb, e), c))
            else:
                if jb + 1 > order:
                    continue
                c = empty()
                put(c, lay, _poly_affine(_bubble_xi(jb), a, b))
                shapes.append((("bubble", jb, e), c))
    return shapes


def _family_blocks(model: EarthModel, family: str, include_fluid_toroidal: bool) -> list[list[int]]:
    if family == "radial":
        return [list(range(len(model.layers)))]
    blocks = model.solid_runs()
    if family == "tangential" or include_fluid_toroidal:
        blocks = blocks + [[k] for k, l in enumerate(model.layers) if l.kind == "fluid"]
    return sorted(blocks, key=lambda b: b[0])


def _continuity_tags(model: EarthModel, family: str, support: tuple[int, ...]) -> tuple:
    tags = []
    for itf in model.interfaces:
        if itf.outer is None:
            continue
        inside = itf.inner in support and itf.outer in support
        if not inside:
            tags.append("none")
        elif itf.kind == "SS":
            tags.append("full")
        else:
            tags.append("normal-only" if family == "radial" else "none")
    return tuple(tags)


@dataclass
class BasisSet:
    model: EarthModel
    lmax: int
    radial_order: int
    functions: list[BasisFunction]
    include_fluid_toroidal: bool = False
    blocks: dict = field(default_factory=dict)  # (l, m) -> list of indices

    def __post_init__(self):
        self.blocks = {}
        for i, f in enumerate(self.functions):
            self.blocks.setdefault((f.l, f.m), []).append(i)

    def __len__(self) -> int:
        return len(self.functions)

    def manifest_rows(self):
        for i, f in enumerate(self.functions):
            yield i, f.l, f.m, f.family, ";".join(str(k) for k in f.shape.support)


def _generate(model, lmax, radial_order, include_fluid_toroidal) -> list[BasisFunction]:
    maxdeg = max(radial_order, max(lmax, 1))
    out = []
    for l, m in degree_orders(lmax):
        for family in FAMILIES:
            if family != "radial" and l == 0:
                continue
            m0 = max(l, 1) if family == "radial" else l
            for block in _family_blocks(model, family, include_fluid_toroidal):
                support = tuple(block)
                for tail, coefs in _block_shapes(model, block, radial_order, m0, maxdeg):
                    uid = (l, m, family, support, tail)
                    out.append(
                        BasisFunction(
                            l, m, family, RadialShape(support, coefs), _continuity_tags(model, family, support), uid
                        )
                    )
    return out


def build_basis(
    model: EarthModel,
    lmax: int,
    radial_order: int,
    include_fluid_toroidal: bool = False,
    dimension_cap: int = 4000,
    modes=None,
) -> BasisSet:
    """Build the trial space; ``modes`` optionally restricts to given (l, m)."""
    if lmax < 0 or radial_order < 1:
        raise ConfigurationError("need lmax >= 0 and radial_order >= 1")
    fns = _generate(model, lmax, radial_order, include_fluid_toroidal)
    if modes is not None:
        keep = set(modes)
        fns = [f for f in fns if (f.l, f.m) in keep]
    if len(fns) > dimension_cap:
        raise ConfigurationError(f"basis dimension {len(fns)} exceeds cap {dimension_cap}")
    return BasisSet(model, lmax, radial_order, fns, include_fluid_toroidal)


def extend_basis(basis: BasisSet, lmax: int, radial_order: int, dimension_cap: int = 4000) -> BasisSet:
    """Larger space containing ``basis`` as an exact prefix (chain nestedness)."""
    if lmax < basis.lmax or radial_order < basis.radial_order:
        raise ConfigurationError("extension must not shrink any parameter")
    old_uids = {f.uid for f in basis.functions}
    full = _generate(basis.model, lmax, radial_order, basis.include_fluid_toroidal)
    new = [f for f in full if f.uid not in old_uids]
    # re-expand stored coefficient rows to the (possibly) larger degree
    maxdeg = max(radial_order, max(lmax, 1))
    functions = []
    for f in basis.functions + new:
        c = f.shape.coefs
        if c.shape[1] < maxdeg + 1:
            cc = np.zeros((c.shape[0], maxdeg + 1))
            cc[:, : c.shape[1]] = c
            f = BasisFunction(f.l, f.m, f.family, RadialShape(f.shape.support, cc), f.continuity, f.uid)
        functions.append(f)
    if len(functions) > dimension_cap:
        raise ConfigurationError(f"basis dimension {len(functions)} exceeds cap {dimension_cap}")
    return BasisSet(basis.model, lmax, radial_order, functions, basis.include_fluid_toroidal)


# -- point evaluation ----------------------------------------------------------


def evaluate(fn: BasisFunction, x, model: EarthModel, side: str = "-"):
    """Value (3,) and Cartesian gradient (3,3) of one basis function at x.

    Gradient convention: grad[i, j] = d_i u_j.  Points outside the support
    evaluate to zero; ``side`` resolves interface radii.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r == 0.0:
        return np.zeros(3), np.zeros((3, 3))
    lay = model.layer_of(r, side)
    if lay not in fn.shape.support:
        return np.zeros(3), np.zeros((3, 3))
    f = float(fn.shape.value(r, lay))
    df = float(fn.shape.deriv(r, lay))
    ang = _AngularBlock(fn.l, fn.m, x[None, :] / r)
    A0, A1, A2 = ang.family_arrays(fn.family)
    val = f * A0[0]
    grad = df * A1[0] + (f / r) * A2[0]
    return val, grad


class _AngularBlock:
    """Direction-only angular factors shared by all shapes of one (l, m).

    For a field f(r) * A0(dir):  grad = f'(r) A1 + (f/r) A2, with the
    convention grad[i, j] = d_i u_j.
    """

    def __init__(self, l: int, m: int, directions: np.ndarray):
        self.l, self.m = l, m
        sh = solid_harmonic(l, m)
        tab = HarmonicTable(sh, directions)
        self.dirs = directions
        self.Y = tab.Y
        self.rgY = tab.gradY  # = r * grad Y evaluated at r = 1
        self.r2H = tab.hessY  # = r^2 * hess Y at r = 1
        self.k = sh.k

    def family_arrays(self, family: str):
        n = self.dirs
        nd = len(n)
        eye = np.eye(3)[None]
        if family == "radial":
            A0 = self.Y[:, None] * n
            A1 = n[:, :, None] * A0[:, None, :]
            A2 = self.rgY[:, :, None] * n[:, None, :] + self.Y[:, None, None] * (
                eye - n[:, :, None] * n[:, None, :]
            )
            return A0, A1, A2
        if family == "tangential":
            A0 = self.rgY / self.k
            A1 = n[:, :, None] * A0[:, None, :]
            A2 = (n[:, :, None] * self.rgY[:, None, :] + self.r2H) / self.k
            return A0, A1, A2
        if family == "toroidal":
            A0 = np.cross(n, self.rgY) / self.k
            A1 = n[:, :, None] * A0[:, None, :]
            # d_i (eps_jab x_a dY_b) = eps_jab (delta_ia dY_b + x_a H_ib)
            A2 = np.empty((nd, 3, 3))
            eps = _LEVI
            A2 = (
                np.einsum("jab,ia,nb->nij", eps, np.eye(3), self.rgY)
                + np.einsum("jab,na,nib->nij", eps, n, self.r2H)
            ) / self.k
            return A0, A1, A2
        raise ValueError(family)


_LEVI = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _LEVI[_i, _j, _k] = 1.0
    _LEVI[_i, _k, _j] = -1.0


# -- tabulation on a quadrature rule -------------------------------------------


class BlockTables:
    """Per-(l, m) tabulation of all shapes on a quadrature grid."""

    def __init__(self, basis: BasisSet, lm: tuple[int, int], quad: QuadratureRule):
        self.basis = basis
        self.lm = lm
        self.quad = quad
        self.idx = basis.blocks.get(lm, [])
        self.ang = _AngularBlock(lm[0], lm[1], quad.sphere.directions)
        self._fam_arrays = {}
        self._fvals = {}

    def fam(self, family):
        if family not in self._fam_arrays:
            self._fam_arrays[family] = self.ang.family_arrays(family)
        return self._fam_arrays[family]

    def radial_values(self, layer: int):
        """(f, df) arrays of shape (n_block_fns, n_r) on one layer's nodes."""
        key = layer
        if key not in self._fvals:
            r, _ = self.quad.layer_nodes(layer)
            n = len(self.idx)
            f = np.zeros((n, len(r)))
            df = np.zeros((n, len(r)))
            lid = np.full(len(r), layer, dtype=np.int64)
            for a, gi in enumerate(self.idx):
                fn = self.basis.functions[gi]
                if layer not in fn.shape.support:
                    continue
                f[a], df[a] = eval_radial_piecewise(r, None, fn.shape.coefs, lid)
            self._fvals[key] = (f, df)
        return self._fvals[key]

    def families(self):
        return [self.basis.functions[i].family for i in self.idx]

    def layer_fields(self, layer: int):
        """values (a, q, n, 3), gradients (a, q, n, 3, 3) on one layer's grid."""
        f, df = self.radial_values(layer)
        r, _ = self.quad.layer_nodes(layer)
        fams = self.families()
        n_a, n_q, n_d = len(self.idx), len(r), len(self.quad.sphere.directions)
        vals = np.zeros((n_a, n_q, n_d, 3))
        grads = np.zeros((n_a, n_q, n_d, 3, 3))
        for family in set(fams):
            sel = [a for a, fam in enumerate(fams) if fam == family]
            A0, A1, A2 = self.fam(family)
            fs = f[sel][:, :, None, None]
            dfs = df[sel][:, :, None, None]
            vals[sel] = fs * A0[None, None]
            grads[sel] = dfs[..., None] * A1[None, None] + (fs[..., None] / r[None, :, None, None, None]) * A2[
                None, None
            ]
        return vals, grads

    def surface_values(self, radius: float, layer: int):
        """values (a, n, 3) of traces at an interface from one side."""
        fams = self.families()
        n_a, n_d = len(self.idx), len(self.quad.sphere.directions)
        vals = np.zeros((n_a, n_d, 3))
        fvals = np.zeros(n_a)
        for a, gi in enumerate(self.idx):
            fn = self.basis.functions[gi]
            if layer in fn.shape.support:
                fvals[a] = fn.shape.value(radius, layer)
        for family in set(fams):
            sel = [a for a, fam in enumerate(fams) if fam == family]
            A0, _, _ = self.fam(family)
            vals[sel] = fvals[sel][:, None, None] * A0[None]
        return vals


# -- Gram matrices ---------------------------------------------------------------


def gram_matrices(basis: BasisSet, state: ReferenceState, quad: QuadratureRule):
    """Mass (density-weighted L^2) and trial-space Gram matrices.

    M_H[i, j] = int rho0 u_i . u_j dV.  G_E: H^1 over solids, L^2 + div-div
    over fluids, plus the normal-trace L^2 product on interior fluid-fluid
    interfaces and a free fluid surface.  Raises if the radial rule is too
    coarse for the polynomial integrands.
    """
    model = basis.model
    need = _required_radial_order(basis, state)
    if quad.radial_order < need:
        raise ConfigurationError(f"radial quadrature order {quad.radial_order} < required {need}")
    if quad.spherical_degree < 2 * basis.lmax:
        raise ConfigurationError("spherical quadrature degree below 2*lmax")
    n = len(basis)
    M = np.zeros((n, n))
    G = np.zeros((n, n))
    wd = quad.sphere.weights
    for lm in basis.blocks:
        bt = BlockTables(basis, lm, quad)
        gi = np.asarray(bt.idx)
        for layer, lay in enumerate(model.layers):
            r, wr = quad.layer_nodes(layer)
            vals, grads = bt.layer_fields(layer)
            W = wr[:, None] * r[:, None] ** 2 * wd[None, :]
            rho = lay.rho_at(r)[:, None] * np.ones_like(wd)[None, :]
            m_blk = np.einsum("aqnd,qn,bqnd->ab", vals, W * rho, vals, optimize=True)
            M[np.ix_(gi, gi)] += m_blk
            if lay.kind == "solid":
                g_blk = np.einsum("aqnd,qn,bqnd->ab", vals, W, vals, optimize=True)
                g_blk += np.einsum("aqnij,qn,bqnij->ab", grads, W, grads, optimize=True)
            else:
                div = np.einsum("aqnii->aqn", grads)
                g_blk = np.einsum("aqnd,qn,bqnd->ab", vals, W, vals, optimize=True)
                g_blk += np.einsum("aqn,qn,bqn->ab", div, W, div, optimize=True)
            G[np.ix_(gi, gi)] += g_blk
        for i_itf, itf in enumerate(model.interfaces):
            trace_itf = itf.kind == "FF" or (itf.kind == "SURF_F")
            if not trace_itf:
                continue
            ws = wd * itf.radius**2
            nu = quad.sphere.directions
            sides = [itf.inner] if itf.outer is None else [itf.inner, itf.outer]
            # normal trace is single-valued for E-conforming bases; use inner side
            v = bt.surface_values(itf.radius, sides[0])
            un = np.einsum("and,nd->an", v, nu)
            G[np.ix_(gi, gi)] += np.einsum("an,n,bn->ab", un, ws, un, optimize=True)
    M = 0.5 * (M + M.T)
    G = 0.5 * (G + G.T)
    return M, G


def _required_radial_order(basis: BasisSet, state: ReferenceState) -> int:
    dmat = max(
        len(l.rho) + max(len(l.kappa or ()), len(l.mu or ()), len(l.gamma or ())) for l in basis.model.layers
    )
    maxdeg = max(basis.radial_order, max(basis.lmax, 1))
    return maxdeg + dmat // 2 + 3


def gram_condition(M: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))
    return float(ev[-1] / ev[0]) if ev[0] > 0 else math.inf
