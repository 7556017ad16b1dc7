"""First-order reduction of the oscillation system: block operator over
coefficient pairs (q, qdot), quasi-contraction checks, resolvent, Duhamel
propagation, energy tracking and the quadratic eigenvalue spectrum.

Discrete correspondences (P = A + beta*M):
    block operator   T(q, p) = (p, -M^-1 (A q + C p))
    product Gram     <(q1,p1),(q2,p2)> = q2' P q1 + p2' M p1
    energy           E = (p' M p + q' A q) / 2
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .forms import AssembledSystem, ensure_coercivity


class CoercivityFailure(RuntimeError):
    pass


class ResolventRejection(ValueError):
    def __init__(self, lam, cbar):
        super().__init__(f"lambda={lam:g} not above the guaranteed threshold {cbar:g}")
        self.threshold = cbar


@dataclass
class Forcing:
    """Right-hand-side description; F vectors live in the H-dual (pairing
    coefficients against basis functions)."""

    kind: str  # 'zero' | 'step' | 'impulse' | 'callable'
    vector: np.ndarray | None = None
    t0: float = 0.0
    func: object = None
    breakpoints: tuple = ()

    @staticmethod
    def zero():
        return Forcing("zero")

    @staticmethod
    def step(vector, t0: float = 0.0):
        return Forcing("step", np.asarray(vector, dtype=float), t0, breakpoints=(t0,))

    @staticmethod
    def impulse(vector, t0: float = 0.0):
        return Forcing("impulse", np.asarray(vector, dtype=float), t0, breakpoints=(t0,))

    @staticmethod
    def from_callable(func, breakpoints=()):
        return Forcing("callable", func=func, breakpoints=tuple(breakpoints))

    def sample(self, t: float, n: int) -> np.ndarray:
        if self.kind == "zero" or self.kind == "impulse":
            return np.zeros(n)
        if self.kind == "step":
            return self.vector if t >= self.t0 else np.zeros(n)
        return np.asarray(self.func(t), dtype=float)


@dataclass
class FirstOrderSystem:
    system: AssembledSystem
    beta: float
    M: np.ndarray
    A: np.ndarray
    C: np.ndarray
    P: np.ndarray  # A + beta M (product-Gram block)
    cho_M: tuple
    cho_P: tuple
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def apply_block(self, q: np.ndarray, p: np.ndarray):
        """The first-order block operator on a coefficient pair."""
        rhs = self.A @ q + self.C @ p
        return p, -scipy.linalg.cho_solve(self.cho_M, rhs)

    def hnorm2(self, q, p) -> float:
        return float(q @ (self.P @ q) + p @ (self.M @ p))

    def hnorm(self, q, p) -> float:
        return math.sqrt(max(self.hnorm2(q, p), 0.0))

    def hdot(self, q1, p1, q2, p2) -> float:
        return float(q2 @ (self.P @ q1) + p2 @ (self.M @ p1))

    def forcing_hnorm(self, F: np.ndarray) -> float:
        """H-norm of the function represented by the dual vector F."""
        return math.sqrt(max(float(F @ scipy.linalg.cho_solve(self.cho_M, F)), 0.0))

    def coriolis_norm(self) -> float:
        """Operator norm of the Coriolis term on H."""
        if not np.any(self.C):
            return 0.0
        L = scipy.linalg.cholesky(self.M, lower=True)
        X = scipy.linalg.solve_triangular(L, self.C, lower=True)
        X = scipy.linalg.solve_triangular(L, X.T, lower=True).T
        return float(np.linalg.norm(X, 2))


def build_first_order(system: AssembledSystem) -> FirstOrderSystem:
    """Install the first-order blocks; requires coercivity constants."""
    alpha, beta = ensure_coercivity(system)
    P = system.A + beta * system.M
    try:
        cho_P = scipy.linalg.cho_factor(P)
    except scipy.linalg.LinAlgError as exc:
        raise CoercivityFailure(f"A + beta M not positive definite: {exc}") from exc
    cho_M = scipy.linalg.cho_factor(system.M)
    return FirstOrderSystem(system, beta, system.M, system.A, system.C, P, cho_M, cho_P)


def dissipativity_bound(fos: FirstOrderSystem, n_samples: int = 1000, seed: int = 0) -> dict:
    """Random-sample verification of the block-dissipation identity

        Re <T U, U> = beta (q, p)_H

    and the exact supremum c = (beta/2) sqrt(lambda_max(M, P))."""
    rng = np.random.default_rng(seed)
    n = fos.n
    worst_identity = 0.0
    c_measured = -math.inf
    for _ in range(n_samples):
        q = rng.standard_normal(n)
        p = rng.standard_normal(n)
        tq, tp = fos.apply_block(q, p)
        lhs = fos.hdot(tq, tp, q, p)
        rhs = fos.beta * float(p @ (fos.M @ q))
        nrm2 = fos.hnorm2(q, p)
        worst_identity = max(worst_identity, abs(lhs - rhs) / nrm2)
        c_measured = max(c_measured, lhs / nrm2)
    lam_max = float(scipy.linalg.eigvalsh(fos.M, fos.P)[-1])
    c_exact = 0.5 * fos.beta * math.sqrt(max(lam_max, 0.0))
    return {
        "identity_residual": worst_identity,
        "c_measured": c_measured,
        "c_exact": c_exact,
        "samples": n_samples,
    }


def resolvent_threshold(fos: FirstOrderSystem) -> float:
    nrm = fos.coriolis_norm()
    return 0.5 * (nrm + math.sqrt(nrm**2 + 4.0 * max(fos.beta, 0.0)))


def resolvent_solve(fos: FirstOrderSystem, lam: float, rhs_q: np.ndarray, rhs_p: np.ndarray) -> dict:
    """Solve (lambda - T) X = rhs via the second-order Schur system

        (A + lambda C + lambda^2 M) q = M rhs_p + C rhs_q + lambda M rhs_q.
    """
    cbar = resolvent_threshold(fos)
    if lam <= cbar:
        raise ResolventRejection(lam, cbar)
    S = fos.A + lam * fos.C + lam**2 * fos.M
    b = fos.M @ rhs_p + fos.C @ rhs_q + lam * (fos.M @ rhs_q)
    q = scipy.linalg.solve(S, b)
    p = lam * q - rhs_q
    # residual of (lambda - T) X - rhs in the product norm
    tq, tp = fos.apply_block(q, p)
    rq = lam * q - tq - rhs_q
    rp = lam * p - tp - rhs_p
    denom = fos.hnorm(rhs_q, rhs_p) or 1.0
    return {
        "q": q,
        "p": p,
        "residual": fos.hnorm(rq, rp) / denom,
        "schur_condition": float(np.linalg.cond(S)),
        "threshold": cbar,
    }


# -- propagation -------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    Q: np.ndarray  # (nt, n)
    P: np.ndarray  # (nt, n) time derivative coefficients
    method: str
    forcing: Forcing
    meta: dict = field(default_factory=dict)

    def state(self, i: int):
        return self.Q[i], self.P[i]


def _modal_data(fos: FirstOrderSystem, tol: float = 1e-8):
    """M-orthonormal pencil eigendecomposition with a neutral-mode split."""
    w2, Z = scipy.linalg.eigh(fos.A, fos.M)
    scale = max(abs(w2[0]), abs(w2[-1]), 1e-300)
    neutral = np.abs(w2) <= tol * scale
    w2c = np.where(neutral, 0.0, w2)
    return w2c, Z, neutral


def _kernels(w2, dt):
    """Per-mode (cos, sin-type, d/dt cos) kernels; oscillatory for w2 > 0,
    polynomial for w2 = 0, hyperbolic for w2 < 0.  Branch-safe (the
    hyperbolic functions are only evaluated on hyperbolic modes)."""
    w2 = np.atleast_1d(np.asarray(w2, dtype=float))
    om = np.sqrt(np.abs(w2))
    osc = w2 > 0
    hyp = w2 < 0
    c = np.ones_like(om)
    s = np.full_like(om, dt, dtype=float)
    dc = np.zeros_like(om)
    a = om[osc] * dt
    c[osc] = np.cos(a)
    s[osc] = np.sin(a) / om[osc]
    dc[osc] = -om[osc] * np.sin(a)
    if np.any(hyp):
        ah = om[hyp] * dt
        c[hyp] = np.cosh(ah)
        s[hyp] = np.sinh(ah) / om[hyp]
        dc[hyp] = om[hyp] * np.sinh(ah)
    return c, s, dc


def _step_kernel(w2, tau):
    """Response of q'' + w2 q = 1 from rest: (1 - cos)/w2 and its limits."""
    w2 = np.atleast_1d(np.asarray(w2, dtype=float))
    om = np.sqrt(np.abs(w2))
    osc = w2 > 0
    hyp = w2 < 0
    out = np.full_like(om, 0.5 * tau**2, dtype=float)
    out[osc] = (1.0 - np.cos(om[osc] * tau)) / w2[osc]
    if np.any(hyp):
        out[hyp] = (1.0 - np.cosh(om[hyp] * tau)) / w2[hyp]
    return out


def propagate(
    fos: FirstOrderSystem,
    q0: np.ndarray,
    p0: np.ndarray,
    forcing: Forcing,
    t_grid: np.ndarray,
    method: str = "modal",
    rk_tol: float = 1e-10,
    gauss_points: int = 4,
) -> Trajectory:
    """Propagate the second-order system on the grid.

    'modal': eigen-decomposition with per-mode exact exponentials and Gauss
    quadrature on smooth forcing (closed forms for step/impulse); falls back
    to 'rk' with a warning when the rotating pencil is ill-conditioned.
    'rk': adaptive embedded Runge-Kutta on the first-order form.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    rotating = bool(np.any(fos.C))
    if method == "modal":
        if not rotating:
            return _propagate_modal_symmetric(fos, q0, p0, forcing, t_grid, gauss_points)
        traj = _propagate_modal_rotating(fos, q0, p0, forcing, t_grid, gauss_points)
        if traj is not None:
            return traj
        traj = _propagate_rk(fos, q0, p0, forcing, t_grid, rk_tol)
        traj.meta["warning"] = "defective rotating pencil; fell back to rk"
        return traj
    if method == "rk":
        return _propagate_rk(fos, q0, p0, forcing, t_grid, rk_tol)
    raise ValueError(f"unknown method {method!r}")


def _with_breakpoints(t_grid, breakpoints):
    ts = set(float(t) for t in t_grid)
    for b in breakpoints:
        if t_grid[0] < b < t_grid[-1]:
            ts.add(float(b))
    full = np.array(sorted(ts))
    return full


def _propagate_modal_symmetric(fos, q0, p0, forcing, t_grid, gauss_points):
    w2, Z, neutral = _modal_data(fos)
    n = fos.n
    qh = None
    grid = _with_breakpoints(t_grid, forcing.breakpoints)
    qh = np.empty((len(grid), n))
    ph = np.empty((len(grid), n))
    qh[0] = Z.T @ (fos.M @ q0)
    ph[0] = Z.T @ (fos.M @ p0)
    x, wgt = np.polynomial.legendre.leggauss(gauss_points)
    for i in range(1, len(grid)):
        t_prev, t = grid[i - 1], grid[i]
        dt = t - t_prev
        c, s, dc = _kernels(w2, dt)
        qh[i] = c * qh[i - 1] + s * ph[i - 1]
        ph[i] = dc * qh[i - 1] + c * ph[i - 1]
        if forcing.kind == "callable":
            mid, half = 0.5 * (t_prev + t), 0.5 * dt
            for xi, wi in zip(x, wgt):
                spt = mid + half * xi
                g = Z.T @ forcing.sample(spt, n)
                cc, ss, _ = _kernels(w2, t - spt)
                qh[i] += half * wi * ss * g
                ph[i] += half * wi * cc * g
    if forcing.kind in ("step", "impulse"):
        Fh = Z.T @ forcing.vector
        for i, t in enumerate(grid):
            tau = t - forcing.t0
            if tau <= 0:
                continue
            c, s, _ = _kernels(w2, tau)
            if forcing.kind == "step":
                qh[i] += _step_kernel(w2, tau) * Fh
                ph[i] += s * Fh
            else:
                qh[i] += s * Fh
                ph[i] += c * Fh
    keep = np.isin(grid, t_grid)
    Q = (Z @ qh[keep].T).T
    Pd = (Z @ ph[keep].T).T
    return Trajectory(np.asarray(t_grid), Q, Pd, "modal", forcing, {"neutral_modes": int(neutral.sum())})


def _propagate_modal_rotating(fos, q0, p0, forcing, t_grid, gauss_points, cond_cap: float = 1e9):
    n = fos.n
    K = np.zeros((2 * n, 2 * n))
    K[:n, n:] = np.eye(n)
    K[n:, :n] = -fos.A
    K[n:, n:] = -fos.C
    B = np.zeros((2 * n, 2 * n))
    B[:n, :n] = np.eye(n)
    B[n:, n:] = fos.M
    lam, X = scipy.linalg.eig(K, B)
    condX = np.linalg.cond(X)
    if not np.isfinite(condX) or condX > cond_cap:
        return None
    Xinv = np.linalg.inv(X)

    def dual_to_modal(F):
        return Xinv @ np.concatenate([np.zeros(n), scipy.linalg.cho_solve(fos.cho_M, F)])

    grid = _with_breakpoints(t_grid, forcing.breakpoints)
    x, wgt = np.polynomial.legendre.leggauss(gauss_points)
    coef = np.empty((len(grid), 2 * n), dtype=complex)
    coef[0] = Xinv @ np.concatenate([q0, p0]).astype(complex)
    for i in range(1, len(grid)):
        t_prev, t = grid[i - 1], grid[i]
        dt = t - t_prev
        coef[i] = np.exp(lam * dt) * coef[i - 1]
        if forcing.kind == "callable":
            mid, half = 0.5 * (t_prev + t), 0.5 * dt
            for xi, wi in zip(x, wgt):
                spt = mid + half * xi
                coef[i] += half * wi * np.exp(lam * (t - spt)) * dual_to_modal(forcing.sample(spt, n))
    if forcing.kind in ("step", "impulse"):
        Fh = dual_to_modal(forcing.vector)
        for i, t in enumerate(grid):
            tau = t - forcing.t0
            if tau <= 0:
                continue
            if forcing.kind == "step":
                with np.errstate(divide="ignore", invalid="ignore"):
                    fac = np.where(np.abs(lam) * tau > 1e-8, (np.exp(lam * tau) - 1.0) / lam, tau)
                coef[i] += fac * Fh
            else:
                coef[i] += np.exp(lam * tau) * Fh
    keep = np.isin(grid, t_grid)
    U = (X @ coef[keep].T).T
    Q = np.real(U[:, :n])
    Pd = np.real(U[:, n:])
    return Trajectory(np.asarray(t_grid), Q, Pd, "modal", forcing, {"pencil_condition": float(condX)})


def _propagate_rk(fos, q0, p0, forcing, t_grid, rk_tol):
    from scipy.integrate import solve_ivp

    n = fos.n
    scale = max(fos.hnorm(q0, p0), 1.0)

    def rhs(t, y):
        q, p = y[:n], y[n:]
        F = forcing.sample(t, n)
        acc = scipy.linalg.cho_solve(fos.cho_M, F - fos.A @ q - fos.C @ p)
        return np.concatenate([p, acc])

    y0 = np.concatenate([q0, p0]).astype(float)
    if forcing.kind == "impulse" and t_grid[0] <= forcing.t0 <= t_grid[-1]:
        y0 = y0.copy()
    segments = [t_grid[0]] + [b for b in forcing.breakpoints if t_grid[0] < b < t_grid[-1]] + [t_grid[-1]]
    out_t = []
    out_y = []
    y = y0
    for a, b in zip(segments[:-1], segments[1:]):
        if forcing.kind == "impulse" and a == forcing.t0:
            y = y.copy()
            y[n:] += scipy.linalg.cho_solve(fos.cho_M, forcing.vector)
        ts = t_grid[(t_grid >= a) & (t_grid <= b)]
        ts = np.unique(np.concatenate([[a], ts, [b]]))
        sol = solve_ivp(rhs, (a, b), y, method="RK45", t_eval=ts, rtol=1e-10, atol=rk_tol * scale, max_step=np.inf)
        if not sol.success:
            raise RuntimeError(f"rk integration failed: {sol.message}")
        for tt, yy in zip(sol.t, sol.y.T):
            if tt in t_grid and (not out_t or tt > out_t[-1]):
                out_t.append(float(tt))
                out_y.append(yy)
        y = sol.y[:, -1]
    Y = np.asarray(out_y)
    return Trajectory(np.asarray(out_t), Y[:, :n], Y[:, n:], "rk", forcing)


# -- diagnostics --------------------------------------------------------------------


def trajectory_energy(traj: Trajectory, system: AssembledSystem) -> np.ndarray:
    """E(t) = (qdot' M qdot + q' A q)/2 along the trajectory."""
    M, A = system.M, system.A
    return 0.5 * (np.einsum("ti,ij,tj->t", traj.P, M, traj.P) + np.einsum("ti,ij,tj->t", traj.Q, A, traj.Q))


def semigroup_bound_check(traj: Trajectory, fos: FirstOrderSystem, c: float | None = None) -> dict:
    """Pointwise check of |U(t)| <= e^{ct} (|U0| + int_0^t |F|)."""
    if c is None:
        c = dissipativity_bound(fos, 200)["c_exact"]
    t0 = traj.times[0]
    u0 = fos.hnorm(traj.Q[0], traj.P[0])
    ok = True
    worst = 0.0
    fint = 0.0
    rows = []
    for i, t in enumerate(traj.times):
        if i > 0:
            a, b = traj.times[i - 1], traj.times[i]
            x, w = np.polynomial.legendre.leggauss(4)
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            for xi, wi in zip(x, w):
                F = traj.forcing.sample(mid + half * xi, fos.n)
                fint += half * wi * fos.forcing_hnorm(F)
            if traj.forcing.kind == "impulse" and a <= traj.forcing.t0 <= b:
                fint += fos.forcing_hnorm(traj.forcing.vector)
        lhs = fos.hnorm(traj.Q[i], traj.P[i])
        rhs = math.exp(c * (t - t0)) * (u0 + fint)
        rows.append((float(t), lhs, rhs))
        ratio = lhs / rhs if rhs > 0 else 0.0
        worst = max(worst, ratio)
        ok = ok and lhs <= rhs * (1.0 + 1e-9)
    return {"ok": ok, "tightness": worst, "c": c, "rows": rows}


@dataclass
class Spectrum:
    eigenvalues: np.ndarray  # complex
    vectors: np.ndarray  # (2n, k) companion eigenvectors (q over p)
    labels: list  # (l, m, family) dominant label per mode
    participation: list


def spectrum(fos: FirstOrderSystem, count: int | None = None) -> Spectrum:
    """Quadratic-pencil eigenpairs, sorted by (|Im|, l, m, family)."""
    n = fos.n
    if not np.any(fos.C):
        w2, Z, _neutral = _modal_data(fos)
        lam = []
        vecs = []
        for k in range(n):
            w = math.sqrt(abs(w2[k]))
            if w2[k] >= 0:
                lam.extend([1j * w, -1j * w])
            else:
                lam.extend([w, -w])
            for L in (lam[-2], lam[-1]):
                vecs.append(np.concatenate([Z[:, k], L * Z[:, k]]))
        lam = np.asarray(lam, dtype=complex)
        V = np.asarray(vecs).T
    else:
        K = np.zeros((2 * n, 2 * n))
        K[:n, n:] = np.eye(n)
        K[n:, :n] = -fos.A
        K[n:, n:] = -fos.C
        B = np.zeros((2 * n, 2 * n))
        B[:n, :n] = np.eye(n)
        B[n:, n:] = fos.M
        lam, V = scipy.linalg.eig(K, B)
    labels, parts = [], []
    basis = fos.system.basis
    groups: dict = {}
    for i, f in enumerate(basis.functions):
        groups.setdefault((f.l, f.m, f.family), []).append(i)
    for k in range(len(lam)):
        w = {}
        for key, idxs in groups.items():
            qq = V[:n, k][idxs]
            w[key] = float(np.real(np.conj(qq) @ (fos.M[np.ix_(idxs, idxs)] @ qq)))
        tot = sum(w.values()) or 1.0
        best = max(w, key=w.get)
        labels.append(best)
        parts.append({k2: v / tot for k2, v in w.items() if v / tot > 1e-6})
    order = sorted(
        range(len(lam)),
        key=lambda k: (abs(lam[k].imag), labels[k][0], labels[k][1], labels[k][2]),
    )
    if count is not None:
        order = order[: count]
    lam = lam[order]
    V = V[:, order]
    labels = [labels[k] for k in order]
    parts = [parts[k] for k in order]
    return Spectrum(lam, V, labels, parts)


def spectrum_real_part_bound(fos: FirstOrderSystem, spec: Spectrum) -> dict:
    c = dissipativity_bound(fos, 200)["c_exact"]
    scale = float(np.max(np.abs(spec.eigenvalues))) or 1.0
    worst = float(np.max(np.abs(spec.eigenvalues.real)))
    return {"c": c, "max_abs_re": worst, "ok": worst <= c + 1e-8 * scale}


def adjoint_check(fos: FirstOrderSystem) -> dict:
    """Gram adjoint of the block operator against the closed block formula."""
    n = fos.n
    M, C, P = fos.M, fos.C, fos.P
    Minv = scipy.linalg.cho_solve(fos.cho_M, np.eye(n))
    Pinv = scipy.linalg.cho_solve(fos.cho_P, np.eye(n))
    T = np.zeros((2 * n, 2 * n))
    T[:n, n:] = np.eye(n)
    T[n:, :n] = -Minv @ fos.A
    T[n:, n:] = -Minv @ C
    Gram = np.zeros((2 * n, 2 * n))
    Gram[:n, :n] = P
    Gram[n:, n:] = M
    adj_numeric = np.linalg.solve(Gram, T.T @ Gram)
    adj_formula = np.zeros((2 * n, 2 * n))
    adj_formula[:n, n:] = -np.eye(n) + fos.beta * (Pinv @ M)
    adj_formula[n:, :n] = Minv @ P
    adj_formula[n:, n:] = Minv @ C
    scale = np.linalg.norm(adj_numeric) or 1.0
    resid = np.linalg.norm(adj_numeric - adj_formula) / scale
    skew = np.linalg.norm(adj_numeric + T) / max(np.linalg.norm(T), 1e-300)
    return {"residual": resid, "skew_residual": skew, "numeric": adj_numeric, "formula": adj_formula}
