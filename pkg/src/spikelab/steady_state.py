"""Radial spike steady states of the rescaled attractiveness/offender system.

All computations use the rescaled variables (u, v):

    eps^2 Δu - u + v u^3 + alpha0 eps^N = 0
    (D0/eps^{2N}) div(u^2 ∇v) - eps^{-N} v u^3 + gamma0 = 0

on the ball B_R with zero-flux ends. The original fields are A = eps^{-N} u and
V = eps^{2N} v (the scaling for which the two systems coincide).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .grid import RadialGrid, Tridiagonal, ball_volume, radial_laplacian
from .ground_state import GroundState, solve_ground_state

NEWTON_TOL = 1e-10
POINTS_PER_EPS = 80
MIN_POINTS_PER_EPS = 40
MIN_EPS_OVER_R = 0.02


class SteadyStateError(RuntimeError):
    pass


class ResolutionError(SteadyStateError):
    pass


class NewtonError(SteadyStateError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


@lru_cache(maxsize=4)
def reference_ground_state(N: int) -> GroundState:
    return solve_ground_state(N)


@dataclass(frozen=True)
class ModelParams:
    alpha0: float
    gamma0: float
    R: float
    eps: float
    D0: float
    tau: float = 0.0
    N: int = 1
    m2: float | None = None
    m3: float | None = None

    def __post_init__(self):
        if self.N not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.N}")
        for name in ("alpha0", "gamma0", "R", "eps", "D0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.m2 is None or self.m3 is None:
            gs = reference_ground_state(self.N)
            object.__setattr__(self, "m2", gs.m2 if self.m2 is None else self.m2)
            object.__setattr__(self, "m3", gs.m3 if self.m3 is None else self.m3)

    @property
    def ball_volume(self) -> float:
        return ball_volume(self.N, self.R)

    @property
    def D(self) -> float:
        return self.D0 / self.eps ** (2 * self.N)

    @property
    def beta(self) -> float:
        return self.D0**-0.5

    @property
    def v0(self) -> float:
        return (self.m3 / (self.gamma0 * self.ball_volume)) ** 2

    @property
    def tau_tilde(self) -> float:
        return self.eps**self.N * self.tau * self.m2 / (self.gamma0 * self.ball_volume)

    def tau_for(self, tau_tilde: float) -> float:
        return tau_tilde * self.gamma0 * self.ball_volume / (self.eps**self.N * self.m2)

    def with_tau_tilde(self, tau_tilde: float) -> "ModelParams":
        return replace(self, tau=self.tau_for(tau_tilde))

    def constant_state(self) -> tuple[float, float]:
        """The unique spatially constant steady state in (u, v)."""
        s = self.alpha0 + self.gamma0
        return self.eps**self.N * s, self.eps ** (-2 * self.N) * self.gamma0 / s**3

    def to_original(self, u, v):
        """(A, V) = (eps^{-N} u, eps^{2N} v)."""
        e = self.eps**self.N
        return np.asarray(u) / e, np.asarray(v) * e * e


def physical_grid(params: ModelParams, n_phys: int | None = None) -> RadialGrid:
    if params.eps < MIN_EPS_OVER_R * params.R:
        raise ResolutionError(f"eps={params.eps} below the desk-scale floor {MIN_EPS_OVER_R}*R")
    need = MIN_POINTS_PER_EPS * params.R / params.eps
    if n_phys is None:
        n_phys = int(math.ceil(POINTS_PER_EPS * params.R / params.eps))
        n_phys += n_phys % 2
    if n_phys < need - 1e-9:
        raise ResolutionError(f"n_phys={n_phys} does not resolve eps (need >= {need:.0f})")
    return RadialGrid(params.N, n_phys, params.R)


def _face_u2(u: np.ndarray) -> np.ndarray:
    u2 = u * u
    return 0.5 * (u2[:-1] + u2[1:])


def v_operator(params: ModelParams, grid: RadialGrid, u: np.ndarray) -> Tridiagonal:
    """D div(u^2 grad .) - eps^{-N} u^3 with zero-flux ends."""
    lap = radial_laplacian(grid, coef=_face_u2(u), outer="neumann")
    D = params.D
    T = Tridiagonal(D * lap.lower, D * lap.diag, D * lap.upper)
    return T.shifted(-(u**3) / params.eps**params.N)


def solve_v_given_u(params: ModelParams, u: np.ndarray, grid: RadialGrid | None = None) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if grid is None:
        grid = RadialGrid(params.N, len(u) - 1, params.R)
    if u.shape != (grid.n + 1,):
        raise ValueError("u does not match the grid")
    if np.any(u <= 0):
        raise SteadyStateError("u must be positive")
    e = params.eps**params.N
    v = solve_flux_form(grid, params.D0 / e**2, _face_u2(u), u**3 / e, np.full(grid.n + 1, params.gamma0))
    if np.any(v <= 0):
        raise SteadyStateError("v lost positivity; u is not resolved")
    return v


def solve_flux_form(grid: RadialGrid, D: float, coef: np.ndarray, c: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve D div(coef grad v) = c v - b with zero flux at both ends (c >= 0, not all zero).

    Integrating over [0, r_{i+1/2}] gives v_{i+1} - v_i = g_i C_i with C_i the
    enclosed source. Marching from v_0 is linear in v_0, and the total flux
    through r = R must vanish. These are exactly the finite-volume rows, but
    the march avoids the D/h^2 conditioning of the assembled matrix.
    """
    g = grid.h / (D * grid.face_areas() * coef)
    k = grid.volumes * c
    q = grid.volumes * b
    n = grid.n
    xi = np.empty(n + 1)
    eta = np.empty(n + 1)
    xi[0], eta[0] = 1.0, 0.0
    cx = ce = 0.0
    for i in range(n):
        cx += k[i] * xi[i]
        ce += k[i] * eta[i] - q[i]
        xi[i + 1] = xi[i] + g[i] * cx
        eta[i + 1] = eta[i] + g[i] * ce
    cx += k[-1] * xi[-1]
    ce += k[-1] * eta[-1] - q[-1]
    if cx == 0 or not np.isfinite(cx) or not np.isfinite(ce):
        raise SteadyStateError("singular or unstable flux-form solve")
    return eta - (ce / cx) * xi


def flux_form_residual(params: ModelParams, grid: RadialGrid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """v_{i+1} - v_i minus its value from integrating the v-equation over [0, r_{i+1/2}]."""
    e = params.eps**params.N
    src = grid.volumes * (v * u**3 / e - params.gamma0)
    C = np.cumsum(src)[:-1]
    af = grid.face_areas()
    dv_pred = grid.h * e * e * C / (params.D0 * af * _face_u2(u))
    return np.diff(v) - dv_pred


def mass_balance(params: ModelParams, grid: RadialGrid, u: np.ndarray, v: np.ndarray) -> float:
    """Discrete integral of gamma0 - eps^{-N} v u^3 over B_R, relative to gamma0 |B_R|."""
    e = params.eps**params.N
    return float(np.sum(grid.volumes * (params.gamma0 - v * u**3 / e)) / (params.gamma0 * params.ball_volume))


def u_residual(params: ModelParams, grid: RadialGrid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    lap = radial_laplacian(grid, outer="neumann")
    return params.eps**2 * lap.matvec(u) - u + v * u**3 + params.alpha0 * params.eps**params.N


def scaled_residual(params: ModelParams, grid: RadialGrid, u: np.ndarray, v: np.ndarray) -> dict:
    ru = float(np.max(np.abs(u_residual(params, grid, u, v))))
    rf = float(np.max(np.abs(flux_form_residual(params, grid, u, v)))) if grid.n else 0.0
    rm = abs(mass_balance(params, grid, u, v))
    return {"u": ru, "flux": rf, "mass": rm, "max": max(ru, rf, rm)}


def _jacobian(params: ModelParams, grid: RadialGrid, u: np.ndarray, v: np.ndarray):
    """Raw residual and banded (3,3) Jacobian, unknowns interleaved as (u_0, v_0, u_1, v_1, ...)."""
    n1 = grid.n + 1
    eps, N = params.eps, params.N
    e = eps**N
    D = params.D
    lap = radial_laplacian(grid, outer="neumann")
    cf = _face_u2(u)
    Fa = grid.face_areas() / grid.h  # n faces
    vol = grid.volumes
    dv = np.diff(v)
    Fp = np.zeros(n1)
    Fm = np.zeros(n1)
    Fp[:-1] = Fa
    Fm[1:] = Fa
    cp = np.zeros(n1)
    cm = np.zeros(n1)
    cp[:-1] = cf
    cm[1:] = cf
    dvp = np.zeros(n1)
    dvm = np.zeros(n1)
    dvp[:-1] = dv
    dvm[1:] = dv

    Ru = eps**2 * lap.matvec(u) - u + v * u**3 + params.alpha0 * e
    Rv = D / vol * (Fp * cp * dvp - Fm * cm * dvm) - v * u**3 / e + params.gamma0

    m = 2 * n1
    lw, up = 3, 3
    ab = np.zeros((lw + up + 1, m))

    def put(rows, cols, vals):
        ab[up + rows - cols, cols] = vals

    i = np.arange(n1)
    ru, rv = 2 * i, 2 * i + 1
    # u rows
    put(ru, ru, eps**2 * lap.diag - 1.0 + 3.0 * v * u * u)
    put(ru, rv, u**3)
    put(ru[1:], ru[:-1], eps**2 * lap.lower[1:])
    put(ru[:-1], ru[1:], eps**2 * lap.upper[:-1])
    # v rows
    put(rv, rv, -D / vol * (Fp * cp + Fm * cm) - u**3 / e)
    put(rv[:-1], rv[1:], (D / vol * Fp * cp)[:-1])
    put(rv[1:], rv[:-1], (D / vol * Fm * cm)[1:])
    put(rv, ru, D / vol * (Fp * u * dvp - Fm * u * dvm) - 3.0 * v * u * u / e)
    put(rv[:-1], ru[1:], (D / vol * Fp * dvp)[:-1] * u[1:])
    put(rv[1:], ru[:-1], -(D / vol * Fm * dvm)[1:] * u[:-1])
    R = np.empty(m)
    R[0::2] = Ru
    R[1::2] = Rv
    return R, ab, (lw, up)


@dataclass
class SteadyStateSolution:
    params: ModelParams
    grid: RadialGrid
    u: np.ndarray
    v: np.ndarray
    u_init: np.ndarray
    v_init: np.ndarray
    history: list = field(default_factory=list)
    iterations: int = 0
    residual: dict = field(default_factory=dict)

    @property
    def A(self):
        return self.params.to_original(self.u, self.v)[0]

    @property
    def V(self):
        return self.params.to_original(self.u, self.v)[1]

    def rows(self):
        A, V = self.params.to_original(self.u, self.v)
        return list(zip(self.grid.r, self.u, self.v, A, V))


def newton_solve(params: ModelParams, initial, grid: RadialGrid | None = None, tol: float = NEWTON_TOL,
                 maxit: int = 50, max_halvings: int = 30) -> SteadyStateSolution:
    """Damped Newton on the coupled discrete radial system.

    Steps are halved until the scaled residual decreases and both fields stay
    positive. Convergence is declared on the scaled residual (u-equation,
    flux form of the v-equation, and global mass balance).
    """
    u = np.array(initial[0], dtype=float)
    v = np.array(initial[1], dtype=float)
    if grid is None:
        grid = RadialGrid(params.N, len(u) - 1, params.R)
    if u.shape != (grid.n + 1,) or v.shape != u.shape:
        raise ValueError("initial fields do not match the grid")
    if np.any(u <= 0) or np.any(v <= 0):
        raise SteadyStateError("initial fields must be positive")
    u0, v0 = u.copy(), v.copy()
    res = scaled_residual(params, grid, u, v)
    history = [res["max"]]
    it = 0
    while res["max"] >= tol:
        if it >= maxit:
            raise NewtonError(f"no convergence after {maxit} iterations (residual {res['max']:.3e})", history)
        R, ab, lu = _jacobian(params, grid, u, v)
        try:
            dx = solve_banded(lu, ab, -R)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NewtonError(f"singular Jacobian: {exc}", history) from exc
        du, dv = dx[0::2], dx[1::2]
        t = 1.0
        for _ in range(max_halvings + 1):
            ut, vt = u + t * du, v + t * dv
            if np.all(ut > 0) and np.all(vt > 0):
                rt = scaled_residual(params, grid, ut, vt)
                if rt["max"] < res["max"]:
                    break
            t *= 0.5
        else:
            raise NewtonError(f"step rejected after {max_halvings} halvings (residual {res['max']:.3e})", history)
        u, v, res = ut, vt, rt
        it += 1
        history.append(res["max"])
    return SteadyStateSolution(params, grid, u, v, u0, v0, history, it, res)


def cutoff(s: np.ndarray) -> np.ndarray:
    """Quintic smoothstep: 1 for s <= 1, 0 for s >= 2."""
    t = np.clip(np.asarray(s, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


@dataclass
class Approximation:
    grid: RadialGrid
    u: np.ndarray
    v: np.ndarray
    amplitude: float
    v0: float

    @property
    def v_offset(self) -> float:
        """v(0) - v0."""
        return float(self.v[0] - self.v0)


def build_approximate(params: ModelParams, gs: GroundState | None = None, grid: RadialGrid | None = None,
                      normalization: str = "v0") -> Approximation:
    """u = alpha0 eps^N + a w(r/eps) chi(3r/R), v = T[u].

    ``normalization="v0"`` uses a = v0^{-1/2}; ``"self_consistent"`` solves
    a = v(0)^{-1/2} with v = T[u] (the amplitude choice of the residual analysis).
    """
    if params.eps > params.R / 10:
        raise ResolutionError(f"eps={params.eps} too large for the cutoff at R/3 (need eps <= R/10)")
    if gs is None:
        gs = reference_ground_state(params.N)
    if grid is None:
        grid = physical_grid(params)
    r = grid.r
    profile = gs.evaluate(r / params.eps) * cutoff(r / (params.R / 3.0))
    base = params.alpha0 * params.eps**params.N

    def fields(a):
        u = base + a * profile
        return u, solve_v_given_u(params, u, grid)

    a0 = params.v0**-0.5
    if normalization == "v0":
        a = a0
    elif normalization == "self_consistent":
        def g(a):
            return a - fields(a)[1][0] ** -0.5
        lo, hi = 0.25 * a0, 4.0 * a0
        if g(lo) * g(hi) > 0:
            raise SteadyStateError("no self-consistent amplitude: the background term dominates at this eps")
        a = brentq(g, lo, hi, xtol=1e-15, rtol=1e-15)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    u, v = fields(a)
    return Approximation(grid, u, v, a, params.v0)


def star2_norm(params: ModelParams, grid: RadialGrid, f: np.ndarray) -> float:
    """L^2(B_{R/eps}) in y = x/eps plus the sup of |f| / max(e^{-rho/2}, sqrt(eps))."""
    eps = params.eps
    l2 = math.sqrt(max(grid.integrate(f * f), 0.0) / eps**params.N)
    rho = grid.r / eps
    weight = np.maximum(np.exp(-0.5 * rho), math.sqrt(eps))
    return l2 + float(np.max(np.abs(f) / weight))


def star_norm(params: ModelParams, grid: RadialGrid, phi: np.ndarray) -> float:
    """H^2(B_{R/eps}) norm in y plus the weighted sup."""
    eps = params.eps
    h = grid.h
    dphi = np.gradient(phi, h) * eps
    lap = radial_laplacian(grid, outer="neumann").matvec(phi) * eps**2
    l2 = math.sqrt(max(grid.integrate(phi * phi + dphi * dphi + lap * lap), 0.0) / eps**params.N)
    rho = grid.r / eps
    weight = np.maximum(np.exp(-0.5 * rho), math.sqrt(eps))
    return l2 + float(np.max(np.abs(phi) / weight))


def residual_norm(params: ModelParams, approx: Approximation) -> float:
    """||S_eps||_** of the u-equation residual at (u, T[u])."""
    return star2_norm(params, approx.grid, u_residual(params, approx.grid, approx.u, approx.v))


def flatness_constant(params: ModelParams, grid: RadialGrid, v: np.ndarray) -> float:
    """sup_{r>0} |v(r) - v(0)| D0 / r^2."""
    r = grid.r[1:]
    return float(np.max(np.abs(v[1:] - v[0]) * params.D0 / r**2))


def diagnostics(sol: SteadyStateSolution, gs: GroundState | None = None) -> dict:
    p, g = sol.params, sol.grid
    if gs is None:
        gs = reference_ground_state(p.N)
    eps, N = p.eps, p.N
    w = gs.evaluate(g.r / eps)
    base = p.alpha0 * eps**N
    phi = sol.u - base - sol.v[0] ** -0.5 * w
    env = eps ** (1 + N) * np.maximum(np.exp(-g.r / (2 * eps)), math.sqrt(eps))
    out = {
        "u0": float(sol.u[0]),
        "v0_computed": float(sol.v[0]),
        "v0_predicted": p.v0,
        "v0_offset": float(sol.v[0] - p.v0),
        "u0_predicted": base + p.v0**-0.5 * float(gs.w[0]),
        "flatness_constant": flatness_constant(p, g, sol.v),
        "profile_fit_C": float(np.max(np.abs(phi) / env)),
        "correction_star_norm": star_norm(p, g, sol.u - sol.u_init),
        "mass_balance": mass_balance(p, g, sol.u, sol.v),
        "newton_iterations": sol.iterations,
        "newton_residual": sol.residual.get("max", float("nan")),
        "min_u_over_floor": float(np.min(sol.u) / base),
    }
    if np.ptp(sol.u) > 0:
        try:
            out["S_norm"] = residual_norm(p, build_approximate(p, gs, g))
        except (SteadyStateError, ValueError):
            pass
    return out


def fit_exponent(x, y) -> float:
    """Least-squares slope of log|y| against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float))), 1)[0])


def solve_spike(params: ModelParams, n_phys: int | None = None, gs: GroundState | None = None) -> SteadyStateSolution:
    """Approximate spike followed by Newton."""
    grid = physical_grid(params, n_phys)
    approx = build_approximate(params, gs, grid)
    return newton_solve(params, (approx.u, approx.v), grid)


def shadow_limit_v0(params: ModelParams, n_phys: int | None = None, gs: GroundState | None = None) -> float:
    """v(0) of the D0 -> infinity problem (v constant, fixed by mass balance)."""
    grid = physical_grid(params, n_phys)
    approx = build_approximate(params, gs, grid)
    lap = radial_laplacian(grid, outer="neumann")
    eps, e = params.eps, params.eps**params.N
    vol = grid.volumes
    n1 = grid.n + 1
    x = np.concatenate((approx.u, [approx.v[0]]))
    for _ in range(50):
        u, c = x[:-1], x[-1]
        Ru = eps**2 * lap.matvec(u) - u + c * u**3 + params.alpha0 * e
        Rm = np.sum(vol * (c * u**3 / e - params.gamma0)) / (params.gamma0 * params.ball_volume)
        J = np.zeros((n1 + 1, n1 + 1))
        J[:n1, :n1] = eps**2 * lap.to_dense() + np.diag(3 * c * u * u - 1.0)
        J[:n1, -1] = u**3
        J[-1, :n1] = vol * 3 * c * u * u / e / (params.gamma0 * params.ball_volume)
        J[-1, -1] = np.sum(vol * u**3 / e) / (params.gamma0 * params.ball_volume)
        dx = np.linalg.solve(J, -np.concatenate((Ru, [Rm])))
        x += dx
        if np.max(np.abs(dx)) < 1e-13 * np.max(np.abs(x)):
            break
    return float(x[-1])
