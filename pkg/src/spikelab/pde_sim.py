"""IMEX time stepping of the radial system with prognostic q = u^2 v.

    u_t = eps^2 Δu - u + v u^3 + alpha0 eps^N
    tau q_t = D div(u^2 ∇v) - eps^{-N} v u^3 + gamma0,   v = q / u^2
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.signal import argrelextrema

from .grid import RadialGrid, radial_laplacian
from .steady_state import ModelParams, SteadyStateError, _face_u2, solve_flux_form


class SimulationError(RuntimeError):
    pass


@dataclass
class SimState:
    t: float
    u: np.ndarray
    q: np.ndarray

    @property
    def v(self) -> np.ndarray:
        return self.q / (self.u * self.u)


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    grid: RadialGrid
    dt: float = 0.005
    T: float = 60.0
    output_every: int = 10
    max_halvings: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T > self.dt:
            raise ValueError("T must exceed dt")
        if self.output_every < 1:
            raise ValueError("output_every must be >= 1")


def _u_matrix(cfg: SimConfig, dt: float):
    """Banded I - dt (eps^2 Δ - 1) with zero-flux ends."""
    lap = radial_laplacian(cfg.grid, outer="neumann")
    e2 = cfg.params.eps**2
    A = lap.shifted(0.0)
    ab = np.zeros((3, len(A)))
    ab[0, 1:] = -dt * e2 * A.upper[:-1]
    ab[1] = 1.0 + dt - dt * e2 * A.diag
    ab[2, :-1] = -dt * e2 * A.lower[1:]
    return ab


def _advance(state: SimState, cfg: SimConfig, dt: float, cache: dict) -> SimState:
    p = cfg.params
    e = p.eps**p.N
    u, q = state.u, state.q
    v = q / (u * u)
    key = ("u", dt)
    if key not in cache:
        cache[key] = _u_matrix(cfg, dt)
    # diffusion and the linear decay implicit; the cubic source explicit
    u_new = solve_banded((1, 1), cache[key], u + dt * (v * u**3 + p.alpha0 * e))
    if not np.all(u_new > 0):
        raise FloatingPointError("u lost positivity")
    # q-equation: diffusion (coefficient frozen at the new u) and the reaction,
    # which is linear in v, are both taken at the new level
    c = p.tau / dt * u_new**2 + u_new**3 / e
    b = p.tau / dt * q + p.gamma0
    try:
        v_new = solve_flux_form(cfg.grid, p.D, _face_u2(u_new), c, b)
    except SteadyStateError as exc:
        raise FloatingPointError(str(exc)) from exc
    if not np.all(v_new > 0):
        raise FloatingPointError("v lost positivity")
    return SimState(state.t + dt, u_new, u_new**2 * v_new)


def step(state: SimState, cfg: SimConfig, cache: dict | None = None) -> SimState:
    """Advance by cfg.dt, splitting into halved substeps when positivity is lost."""
    return _step_at(state, cfg, {} if cache is None else cache, 0)


def _step_at(state, cfg, cache, depth):
    dt = cfg.dt / 2**depth
    try:
        return _advance(state, cfg, dt, cache)
    except FloatingPointError as exc:
        if depth >= cfg.max_halvings:
            raise SimulationError(f"positivity lost at t={state.t:.6g} after {depth} halvings: {exc}") from exc
    s = state
    for _ in range(2):
        s = _step_at(s, cfg, cache, depth + 1)
    return s


def perturbed(u: np.ndarray, v: np.ndarray, grid: RadialGrid, eps: float, size: float = 0.01) -> SimState:
    """Steady state plus a centred Gaussian bump of width 2 eps and height size*u(0)."""
    du = size * u[0] * np.exp(-((grid.r / (2 * eps)) ** 2))
    u1 = u + du
    return SimState(0.0, u1, u1**2 * v)


@dataclass
class Trajectory:
    t: np.ndarray
    u0: np.ndarray
    v0: np.ndarray
    amp: np.ndarray
    sigma: float
    omega: float
    periods: float
    verdict: str
    final: SimState
    fit: dict = field(default_factory=dict)

    def rows(self):
        return list(zip(self.t, self.u0, self.v0, self.amp))

    def summary(self) -> dict:
        return {"sigma": self.sigma, "omega": self.omega, "periods": self.periods, "verdict": self.verdict,
                **self.fit}


ESCAPE_FRACTION = 0.5
CONVERGED_RTOL = 1e-9


def linear_window(t: np.ndarray, x: np.ndarray, ref: float | None) -> tuple[np.ndarray, str]:
    """Mask of the fitting window and how the record ended.

    Normally the last half of the record. If |x - ref| exceeds
    ESCAPE_FRACTION*|ref| (left the linear regime) or drops below
    CONVERGED_RTOL*|ref| for good (reached the rounding floor) the record is cut there
    and the window is what follows the first quarter of the remainder.
    """
    status = "linear"
    end = len(t)
    if ref is not None:
        d = np.abs(x - ref)
        out = np.nonzero(d > ESCAPE_FRACTION * abs(ref))[0]
        # converged once the deviation stays below the floor for the rest of the record
        future = np.maximum.accumulate(d[::-1])[::-1]
        flat = np.nonzero(future < CONVERGED_RTOL * abs(ref))[0]
        if len(out) and out[0] > 0:
            status, end = "escaped", int(out[0])
        if len(flat) and flat[0] > 1 and flat[0] < end:
            status, end = "converged", int(flat[0])
    t_end = t[end - 1]
    frac = 0.5 if status == "linear" else 0.25
    mask = (t >= t[0] + frac * (t_end - t[0])) & (np.arange(len(t)) < end)
    return mask, status


def envelope_fit(t: np.ndarray, x: np.ndarray, ref: float | None = None) -> dict:
    """Growth rate and angular frequency of the oscillation in x(t).

    Peak-to-peak amplitudes between consecutive extrema are regressed in log
    against time over the window from linear_window. Without enough extrema
    the decay of |x - ref| is fitted instead.
    """
    mask, status = linear_window(t, x, ref)
    th, xh = t[mask], x[mask]
    imax = argrelextrema(xh, np.greater)[0]
    imin = argrelextrema(xh, np.less)[0]
    ext = np.sort(np.concatenate((imax, imin)))
    out = {"n_extrema": int(len(ext)), "regime": status,
           "window": (float(th[0]), float(th[-1])) if len(th) else (math.nan, math.nan)}
    if len(imax) >= 2:
        period = float(np.mean(np.diff(th[imax])))
        out["omega"] = 2 * math.pi / period
        out["periods"] = float((th[-1] - th[0]) / period)
    else:
        out["omega"] = 0.0
        out["periods"] = 0.0
    if len(ext) >= 4:
        amp = np.abs(np.diff(xh[ext]))
        tm = 0.5 * (th[ext][1:] + th[ext][:-1])
        good = amp > 0
        out["sigma"] = float(np.polyfit(tm[good], np.log(amp[good]), 1)[0])
        out["method"] = "peak_to_peak"
    elif ref is not None and len(th) >= 2:
        d = np.abs(xh - ref)
        good = d > 1e-300
        out["sigma"] = float(np.polyfit(th[good], np.log(d[good]), 1)[0]) if good.sum() >= 2 else float("nan")
        out["method"] = "deviation"
    else:
        out["sigma"] = float("nan")
        out["method"] = "none"
    return out


def run(cfg: SimConfig, initial: SimState, reference: tuple | None = None) -> Trajectory:
    """Integrate to cfg.T recording u(0), v(0) and |u(0) - u_ref(0)| at the output cadence."""
    if np.any(initial.u <= 0) or np.any(initial.q <= 0):
        raise SimulationError("initial state must be positive")
    nsteps = int(round(cfg.T / cfg.dt))
    uref = float(reference[0][0]) if reference is not None else float(initial.u[0])
    cache: dict = {}
    s = initial
    ts, u0s, v0s = [s.t], [s.u[0]], [s.v[0]]
    for k in range(1, nsteps + 1):
        s = step(s, cfg, cache)
        if k % cfg.output_every == 0 or k == nsteps:
            ts.append(k * cfg.dt)
            u0s.append(s.u[0])
            v0s.append(s.v[0])
    t = np.array(ts)
    u0 = np.array(u0s)
    fit = envelope_fit(t, u0, uref if reference is not None else None)
    sigma, omega, periods = fit["sigma"], fit["omega"], fit["periods"]
    if not math.isfinite(sigma):
        verdict = "undetermined"
    elif sigma > 0:
        verdict = "unstable/oscillatory" if periods >= 1 else "unstable"
    else:
        verdict = "stable/oscillatory" if periods >= 1 else "stable"
    return Trajectory(t, u0, np.array(v0s), np.abs(u0 - uref), sigma, omega, periods, verdict, s, fit)


def mass_rate_defect(cfg: SimConfig, s0: SimState, s1: SimState) -> float:
    """Discrete defect of d/dt ∫q = (1/tau) ∫(gamma0 - eps^{-N} v u^3) over one step."""
    p, g = cfg.params, cfg.grid
    e = p.eps**p.N
    dt = s1.t - s0.t
    lhs = np.sum(g.volumes * (s1.q - s0.q)) / dt
    rhs = np.sum(g.volumes * (p.gamma0 - s1.v * s1.u**3 / e)) / p.tau
    return float(abs(lhs - rhs) / max(abs(rhs), np.sum(g.volumes) * p.gamma0 / p.tau))
