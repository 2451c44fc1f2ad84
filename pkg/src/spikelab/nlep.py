"""Scalar characteristic function of the nonlocal eigenvalue problem and its roots.

Both nonlocal terms multiply w^3, so every eigenfunction with a nonvanishing
nonlocal projection is a multiple of psi = (L0 - lam)^{-1} w^3 and the
eigenvalue problem collapses to the scalar equation F(lam; tau) = 0 with

    F = 3/(1+tau lam) <w^2, psi>/m3 + 2 tau lam/(1+tau lam) <w, psi>/m2 - 1.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .grid import RadialGrid
from .ground_state import GroundState, solve_ground_state
from .operators import (LinearizedOperator, RadialSpectrum, ShiftAtSpectrum, linearized_operator,
                        radial_spectrum)

DEFAULT_NLEP_N = 32000
DEFAULT_NLEP_L = 20.0
ROOT_TOL = 1e-10
# the rounding floor of |F| grows with the grid size; when the line search finds
# no descent below tol the iterate is accepted if |F| < NOISE_TOL
NOISE_TOL = 1e-8
FD_STEP = 1e-7
MAX_STEPS_PER_DECADE = 60
# Large-tau coefficient of Re(lam)*tau in 1D as usually quoted. It rests on the
# value 8/3 + pi^2/9 for the y^2 w_y^2 integral; see b_profile for the value
# implied by the computed profile.
B_SECH_STATED = (math.pi**2 - 12.0) / 36.0


class NlepError(RuntimeError):
    pass


class PoleError(NlepError):
    """lam sits on the pole at -1/tau."""


class NonConvergence(NlepError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


class BracketError(NlepError):
    pass


class NonHopfCrossing(NlepError):
    pass


class ContinuationError(NlepError):
    def __init__(self, msg, branch=None):
        super().__init__(msg)
        self.branch = branch


class ContourError(NlepError):
    pass


@dataclass(frozen=True)
class NlepProblem:
    N: int
    gs: GroundState
    op: LinearizedOperator
    tau: float = 0.0
    m2: float = field(init=False)
    m3: float = field(init=False)
    _spectrum: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.tau < 0 or not math.isfinite(self.tau):
            raise ValueError(f"tau must be finite and >= 0, got {self.tau}")
        if self.gs.grid is not self.op.grid and self.gs.grid != self.op.grid:
            raise ValueError("ground state and operator must share one grid")
        if self.N != self.gs.N:
            raise ValueError("dimension mismatch")
        w = self.op.w
        object.__setattr__(self, "m2", float(self.op.inner(w, w)))
        object.__setattr__(self, "m3", float(self.op.inner(w, w**2)))

    @classmethod
    def build(cls, N: int, n: int = DEFAULT_NLEP_N, L: float = DEFAULT_NLEP_L, tau: float = 0.0,
              gs: GroundState | None = None) -> "NlepProblem":
        if gs is None:
            gs = solve_ground_state(N, RadialGrid(N, n, L))
        return cls(N, gs, linearized_operator(gs), tau)

    def with_tau(self, tau: float) -> "NlepProblem":
        # the spectrum cache is shared: it does not depend on tau
        return replace(self, tau=float(tau), _spectrum=self._spectrum)

    @property
    def spectrum(self) -> RadialSpectrum:
        if not self._spectrum:
            self._spectrum.append(radial_spectrum(self.op))
        return self._spectrum[0]


def characteristic_value(p: NlepProblem, lam: complex) -> complex:
    lam = complex(lam)
    if lam.imag < 0:
        # evaluate on the upper half-plane so that F(conj lam) = conj F(lam) exactly
        return characteristic_value(p, lam.conjugate()).conjugate()
    tl = p.tau * lam
    if abs(1.0 + tl) < 1e-12 * (1.0 + abs(tl)):
        raise PoleError(f"lam={lam} is at the pole -1/tau")
    w = p.op.w
    psi = p.op.resolve(lam, w**3)
    a = complex(p.op.inner(w * w, psi)) / p.m3
    b = complex(p.op.inner(w, psi)) / p.m2
    F = (3.0 * a + 2.0 * tl * b) / (1.0 + tl) - 1.0
    return complex(F.real, 0.0) if lam.imag == 0.0 else F


def _dF(p: NlepProblem, lam: complex) -> complex:
    # a real step keeps the real-axis path real
    d = FD_STEP * (1.0 + abs(lam))
    return (characteristic_value(p, lam + d) - characteristic_value(p, lam - d)) / (2 * d)


def _near_pole(p: NlepProblem, lam: complex) -> bool:
    scale = 1e-8 * (1.0 + abs(lam))
    if p.tau > 0 and abs(lam + 1.0 / p.tau) < scale:
        return True
    return bool(p._spectrum) and abs(lam - p.spectrum.mu0) < scale


def find_eigenvalue(p: NlepProblem, lam_init: complex, tol: float = ROOT_TOL, maxit: int = 60) -> complex:
    """Damped Newton on F with a central-difference derivative.

    Stops at |F| < tol, or where the line search stalls on rounding noise with |F| < NOISE_TOL.
    """
    lam = complex(lam_init)
    F = characteristic_value(p, lam)
    history = [(lam, abs(F))]
    for _ in range(maxit):
        if abs(F) < tol:
            return lam
        dF = _dF(p, lam)
        if dF == 0:
            raise NonConvergence("vanishing derivative", history)
        step = -F / dF
        t = 1.0
        for _ in range(30):
            trial = lam + t * step
            try:
                if _near_pole(p, trial):
                    raise PoleError("iterate captured by a pole")
                Ft = characteristic_value(p, trial)
            except (ShiftAtSpectrum, PoleError):
                Ft = None
            if Ft is not None and abs(Ft) < abs(F):
                break
            t *= 0.5
        else:
            if abs(F) < NOISE_TOL:
                return lam
            raise NonConvergence(f"no descent from lam={lam}", history)
        lam, F = trial, Ft
        history.append((lam, abs(F)))
    if abs(F) < tol:
        return lam
    raise NonConvergence(f"|F|={abs(F):.3e} after {maxit} iterations", history)


def asymptotic_seed(p: NlepProblem, tau: float | None = None) -> complex:
    """Large-tau approximation to the dominant upper-half-plane eigenvalue."""
    tau = p.tau if tau is None else tau
    if p.N == 2:
        return p.gs.c0 ** (1 / 3) * tau ** (-1 / 3) * cmath.exp(1j * math.pi / 3)
    return 1j * math.sqrt(2.0) / math.sqrt(tau) + b_profile(p.gs) / tau


def b_profile(gs: GroundState) -> float:
    """Re(lam)*tau limit in 1D from the computed profile, 4 |w0|^2/m2 - 1."""
    return 4.0 * gs.w0_norm2 / gs.m2 - 1.0


@dataclass
class EigenBranch:
    taus: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    abs_F: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    seed: str = ""
    history: list = field(default_factory=list)

    def append(self, tau, lam, absF, ok=True):
        self.taus.append(float(tau))
        self.lambdas.append(complex(lam))
        self.abs_F.append(float(absF))
        self.converged.append(bool(ok))

    def sign_changes(self) -> list:
        """Indices k with Re lam changing sign between k and k+1."""
        re = np.array([l.real for l in self.lambdas])
        return [k for k in range(len(re) - 1) if re[k] * re[k + 1] < 0]

    def rows(self):
        return [(t, l.real, l.imag, a) for t, l, a in zip(self.taus, self.lambdas, self.abs_F)]


def _continue(p: NlepProblem, tau_from, lam_from, tau_to, lam_pred, depth, max_depth, branch):
    """Root at tau_to seeded by prediction; bisects the tau step on failure."""
    bound = 0.5 * abs(lam_from) + 1e-8
    try:
        q = p.with_tau(tau_to)
        lam = find_eigenvalue(q, lam_pred)
        if abs(lam - lam_from) <= bound:
            return lam
    except (NonConvergence, ShiftAtSpectrum, PoleError):
        pass
    if depth >= max_depth:
        raise ContinuationError(f"continuation failed between tau={tau_from} and {tau_to}", branch)
    mid = math.sqrt(tau_from * tau_to) if tau_from > 0 and tau_to > 0 else 0.5 * (tau_from + tau_to)
    branch.history.append(f"bisect tau step [{tau_from:.6g}, {tau_to:.6g}]")
    lam_mid = _continue(p, tau_from, lam_from, mid, lam_from, depth + 1, max_depth, branch)
    return _continue(p, mid, lam_mid, tau_to, lam_mid, depth + 1, max_depth, branch)


def scan_branch(p: NlepProblem, tau_range, steps: int, lam_init: complex | None = None,
                max_depth: int = 8) -> EigenBranch:
    """Track one root over a geometric tau sequence starting at tau_range[0].

    The range may run downward. The starting root comes from ``lam_init`` (or
    the large-tau seed) refined by find_eigenvalue.
    """
    t0, t1 = float(tau_range[0]), float(tau_range[1])
    if t0 <= 0 or t1 <= 0:
        raise ValueError("scan endpoints must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    decades = abs(math.log10(t1 / t0))
    if t0 != t1 and steps - 1 > MAX_STEPS_PER_DECADE * max(decades, 1e-12) + 1e-9:
        raise ValueError(f"at most {MAX_STEPS_PER_DECADE} steps per decade")
    taus = [t0] if t0 == t1 or steps == 1 else list(np.geomspace(t0, t1, steps))
    seed = asymptotic_seed(p, t0) if lam_init is None else complex(lam_init)
    branch = EigenBranch(seed=f"lam_init={seed!r} at tau={t0!r}")
    q = p.with_tau(t0)
    lam = find_eigenvalue(q, seed)
    branch.append(t0, lam, abs(characteristic_value(q, lam)))
    prev = None
    for k in range(1, len(taus)):
        ta, tb = taus[k - 1], taus[k]
        pred = lam
        if prev is not None:
            # secant predictor in log tau
            s = math.log(tb / ta) / math.log(ta / prev[0])
            pred = lam + s * (lam - prev[1])
        new = _continue(p, ta, lam, tb, pred, 0, max_depth, branch)
        prev = (ta, lam)
        lam = new
        branch.append(tb, lam, abs(characteristic_value(p.with_tau(tb), lam)))
    return branch


def dominant_root(p: NlepProblem, tau_seed: float = 1e4, steps_per_decade: int = 20) -> complex:
    """Root on the large-tau branch, continued from tau_seed to p.tau."""
    if p.tau <= 0:
        raise ValueError("the large-tau branch is defined for tau > 0")
    ts = max(tau_seed, p.tau)
    steps = max(2, int(math.ceil(steps_per_decade * abs(math.log10(ts / p.tau)))) + 1)
    br = scan_branch(p, (ts, p.tau), steps if ts != p.tau else 1)
    return br.lambdas[-1]


def _winding(p: NlepProblem, path, max_depth: int = 40, min_samples: int = 64):
    """Total change of arg F along a closed polygonal path, in turns."""
    total = 0.0
    for a, b in zip(path[:-1], path[1:]):
        ts = np.linspace(0.0, 1.0, min_samples + 1)
        pts = [a + (b - a) * t for t in ts]
        vals = [characteristic_value(p, z) for z in pts]
        stack = [(pts[i], pts[i + 1], vals[i], vals[i + 1], 0) for i in range(min_samples)]
        while stack:
            za, zb, fa, fb, d = stack.pop()
            if min(abs(fa), abs(fb)) < 1e-14:
                raise ContourError("F vanishes on the contour")
            dphi = cmath.phase(fb / fa)
            if abs(dphi) > math.pi / 4 or abs(math.log(abs(fb) / abs(fa))) > 1.0:
                if d >= max_depth:
                    raise ContourError("contour resolution exhausted near a zero or pole")
                zm = 0.5 * (za + zb)
                fm = characteristic_value(p, zm)
                stack.append((zm, zb, fm, fb, d + 1))
                stack.append((za, zm, fa, fm, d + 1))
                continue
            total += dphi
    return total / (2 * math.pi)


def enclosed_poles(p: NlepProblem, rect) -> dict:
    """Poles of F inside an open rectangle: L0 eigenvalues on the real segment and -1/tau."""
    x0, x1, y0, y1 = rect
    out = {"L0": 0, "tau": 0, "mu0_enclosed": False, "mu0_projection": None}
    if y0 < 0 < y1:
        if x1 > x0:
            out["L0"] = p.op.count_above(x0) - p.op.count_above(x1)
        sp = p.spectrum
        out["mu0_enclosed"] = bool(x0 < sp.mu0 < x1)
        out["mu0_projection"] = float(p.op.inner(p.op.w ** 2, sp.phi0))
        if p.tau > 0 and x0 < -1.0 / p.tau < x1:
            out["tau"] = 1
    return out


def count_unstable(p: NlepProblem, rect=(1e-3, 1.0, -1.0, 1.0), max_nudges: int = 8) -> dict:
    """Zeros of F inside the rectangle (x0, x1) x (y0, y1) by the argument principle.

    Returns a record with the zero count, the winding number and the enclosed
    poles that were added back.
    """
    x0, x1, y0, y1 = map(float, rect)
    if x1 <= x0 or y1 <= y0:
        return {"zeros": 0, "winding": 0, "poles": 0, "rect": [x0, x1, y0, y1], "nudges": 0}
    size = max(x1 - x0, y1 - y0)
    for k in range(max_nudges + 1):
        # expand slightly on each retry to step off a zero or pole on an edge
        e = 0.0 if k == 0 else size * 1e-6 * 3**k
        r = (x0 - e if x0 - e > 0 or x0 <= 0 else x0 * (1 - 1e-3 * k), x1 + e, y0 - e, y1 + e)
        path = [complex(r[0], r[2]), complex(r[1], r[2]), complex(r[1], r[3]), complex(r[0], r[3]),
                complex(r[0], r[2])]
        try:
            turns = _winding(p, path)
        except (ContourError, ShiftAtSpectrum, PoleError):
            continue
        wnum = int(round(turns))
        if abs(turns - wnum) > 1e-3:
            continue
        poles = enclosed_poles(p, r)
        npoles = poles["L0"] + poles["tau"]
        return {"zeros": wnum + npoles, "winding": wnum, "poles": npoles, "rect": list(r),
                "nudges": k, "mu0_enclosed": poles["mu0_enclosed"],
                "mu0_projection": poles["mu0_projection"]}
    raise ContourError(f"contour collides with a zero or pole after {max_nudges} nudges")


@dataclass(frozen=True)
class HopfPoint:
    tau: float
    lam: complex
    branch: EigenBranch


def find_hopf(p: NlepProblem, bracket=(1e-2, 1e4), tau_seed: float = 1e4, steps_per_decade: int = 20,
              tol: float = 1e-8) -> HopfPoint:
    """Crossing of the large-tau branch through the imaginary axis inside ``bracket``."""
    lo, hi = sorted(map(float, bracket))
    if lo <= 0:
        raise ValueError("bracket must be positive")
    ts = max(tau_seed, hi)
    steps = int(math.ceil(steps_per_decade * math.log10(ts / lo))) + 1
    try:
        br = scan_branch(p, (ts, lo), max(steps, 2))
    except ContinuationError as exc:
        br = exc.branch
        if br is None or len(br.taus) < 2:
            raise BracketError(f"no crossing found: branch lost ({exc})") from exc
    inside = [k for k in br.sign_changes() if lo <= min(br.taus[k], br.taus[k + 1]) and
              max(br.taus[k], br.taus[k + 1]) <= hi]
    if not inside:
        re = [l.real for l in br.lambdas]
        raise BracketError(f"no crossing found in [{lo:g}, {hi:g}]: Re lam ranges over "
                           f"[{min(re):.3e}, {max(re):.3e}]")
    k = inside[0]
    ta, tb = br.taus[k], br.taus[k + 1]
    state = {"tau": ta, "lam": br.lambdas[k]}

    def re_lam(t):
        lam = _continue(p, state["tau"], state["lam"], t, state["lam"], 0, 8, br)
        state["tau"], state["lam"] = t, lam
        return lam.real

    th = brentq(lambda s: re_lam(math.exp(s)), math.log(ta), math.log(tb), xtol=1e-15, rtol=1e-15,
                maxiter=200)
    th = math.exp(th)
    lam_h = find_eigenvalue(p.with_tau(th), state["lam"])
    if abs(lam_h.real) > tol:
        # polish with secant steps on Re lam in tau
        t_a, r_a = th, lam_h.real
        t_b = th * (1 + 1e-9)
        r_b = re_lam(t_b)
        for _ in range(20):
            if r_b == r_a:
                break
            t_a, t_b, r_a = t_b, t_b - r_b * (t_b - t_a) / (r_b - r_a), r_b
            r_b = re_lam(t_b)
            if abs(r_b) < tol:
                break
        th, lam_h = t_b, state["lam"]
    if abs(lam_h.imag) < 1e-8:
        raise NonHopfCrossing(f"eigenvalue crosses at lam={lam_h}: imaginary part collapsed")
    if abs(lam_h.real) > tol:
        raise NonConvergence(f"|Re lam_h|={abs(lam_h.real):.2e} above {tol}")
    return HopfPoint(th, lam_h, br)


def asymptotic_checks(p: NlepProblem, taus=(1e2, 1e3, 1e4)) -> dict:
    """Dominant root at each tau against the large-tau formulas."""
    rows = []
    for tau in taus:
        q = p.with_tau(tau)
        lam = find_eigenvalue(q, asymptotic_seed(q))
        row = {"tau_tilde": float(tau), "re_lambda": lam.real, "im_lambda": lam.imag,
               "abs_F": abs(characteristic_value(q, lam))}
        if p.N == 2:
            c0 = p.gs.c0
            ratio = abs(lam) ** 3 * tau / c0
            row.update({"c0": c0, "abs_lambda_cubed_tau_over_c0": ratio, "rel_err_modulus": abs(ratio - 1.0),
                        "arg_lambda": cmath.phase(lam), "arg_err": abs(cmath.phase(lam) - math.pi / 3)})
        else:
            im_s = lam.imag * math.sqrt(tau)
            re_s = lam.real * tau
            row.update({"im_lambda_sqrt_tau": im_s, "rel_err_im": abs(im_s - math.sqrt(2.0)) / math.sqrt(2.0),
                        "re_lambda_tau": re_s, "b_stated": B_SECH_STATED,
                        "rel_err_re_vs_stated": abs(re_s - B_SECH_STATED) / abs(B_SECH_STATED),
                        "b_profile": b_profile(p.gs),
                        "rel_err_re_vs_profile": abs(re_s - b_profile(p.gs)) / abs(b_profile(p.gs))})
        rows.append(row)
    return {"N": p.N, "rows": rows}


def invisible_mode_diagnostic(p: NlepProblem) -> dict:
    """Right-half-plane L0 eigenvalues and their projections on w and w^2.

    A mode invisible to F would need an L0 eigenfunction orthogonal to both;
    the only nonnegative radial eigenvalue is mu0 and phi0 > 0 projects on both.
    """
    sp = p.spectrum
    w = p.op.w
    return {"n_positive": p.op.count_above(0.0), "mu0": sp.mu0, "mu_next": sp.mu_next,
            "proj_w": float(p.op.inner(w, sp.phi0)), "proj_w2": float(p.op.inner(w * w, sp.phi0))}
