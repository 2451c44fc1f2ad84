"""Discrete linearized operator L0 = Δ - 1 + 3w^2 on radial grid functions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.linalg.lapack import dgttrf, dgttrs, zgttrf, zgttrs

from .grid import RadialGrid, Tridiagonal, radial_laplacian
from .ground_state import GroundState

PIVOT_RTOL = 1e-12
COND_LIMIT = 1e12


class ShiftAtSpectrum(ArithmeticError):
    """The shift lies (numerically) on the spectrum of L0."""


class GridMismatch(ValueError):
    pass


class SpectrumError(RuntimeError):
    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class RadialSpectrum:
    mu0: float
    phi0: np.ndarray
    mu_next: float
    iterations: int


@dataclass(frozen=True)
class LinearizedOperator:
    """Δ_h - 1 + potential on nodes 0..n-1, with u(L) = 0.

    Grid functions carry all n+1 nodes; the last entry is the Dirichlet value
    and is ignored on input and zero on output. The matrix is self-adjoint in
    the inner product weighted by the finite-volume cell measures.
    """

    grid: RadialGrid
    potential: np.ndarray
    w: np.ndarray | None = None
    lap: Tridiagonal = field(init=False, repr=False)
    matrix: Tridiagonal = field(init=False, repr=False)

    def __post_init__(self):
        n = self.grid.n
        pot = np.asarray(self.potential, dtype=float)
        if pot.shape == (n + 1,):
            pot = pot[:n]
        if pot.shape != (n,):
            raise GridMismatch(f"potential has shape {pot.shape}, expected ({n + 1},)")
        object.__setattr__(self, "potential", pot)
        lap = radial_laplacian(self.grid, outer="dirichlet")
        object.__setattr__(self, "lap", lap)
        object.__setattr__(self, "matrix", lap.shifted(pot - 1.0))

    @property
    def weights(self) -> np.ndarray:
        return self.grid.volumes[: self.grid.n]

    def inner(self, f: np.ndarray, g: np.ndarray):
        """Bilinear (no conjugation) volume-weighted inner product."""
        n = self.grid.n
        return np.sum(self.weights * f[:n] * g[:n])

    def _check(self, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi)
        if phi.shape != (self.grid.n + 1,):
            raise GridMismatch(f"grid function has shape {phi.shape}, expected ({self.grid.n + 1},)")
        return phi

    def _pad(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.n + 1, dtype=x.dtype)
        out[:-1] = x
        return out

    def apply(self, phi: np.ndarray) -> np.ndarray:
        phi = self._check(phi)
        return self._pad(self.matrix.matvec(phi[:-1]))

    def factor(self, lam: complex):
        """LU factors of L0 - lam, or ShiftAtSpectrum for a vanishing pivot."""
        A = self.matrix
        lam = complex(lam)
        real = lam.imag == 0.0
        if real:
            dl, d, du = A.lower[1:].copy(), A.diag - lam.real, A.upper[:-1].copy()
            dl, d, du, du2, ipiv, info = dgttrf(dl, d, du)
        else:
            dl = A.lower[1:].astype(complex)
            du = A.upper[:-1].astype(complex)
            d = A.diag - lam
            dl, d, du, du2, ipiv, info = zgttrf(dl, d, du)
        scale = np.max(np.abs(A.diag)) + abs(lam)
        piv = np.min(np.abs(d)) if info == 0 else 0.0
        if info != 0 or piv < PIVOT_RTOL * scale:
            raise ShiftAtSpectrum(f"shift {lam} hits the spectrum (relative pivot {piv / scale:.2e})")
        return real, (dl, d, du, du2, ipiv), scale

    def resolve(self, lam: complex, rhs: np.ndarray) -> np.ndarray:
        """Solve (L0 - lam) phi = rhs; real shifts with real rhs stay real."""
        rhs = self._check(rhs)
        real, lu, scale = self.factor(lam)
        b = rhs[:-1]
        if real and not np.iscomplexobj(b):
            x, info = dgttrs(*lu, b.astype(float))
        else:
            solver = dgttrs if real else zgttrs
            if real:
                xr, info = solver(*lu, b.real.astype(float))
                xi, _ = solver(*lu, b.imag.astype(float))
                x = xr + 1j * xi
            else:
                x, info = solver(*lu, b.astype(complex))
        if info != 0:
            raise ShiftAtSpectrum(f"tridiagonal solve failed (info={info})")
        bn = np.max(np.abs(b))
        if bn > 0 and np.max(np.abs(x)) * scale > COND_LIMIT * bn:
            raise ShiftAtSpectrum(f"shift {lam} is within the conditioning threshold of the spectrum")
        return self._pad(x)

    def symmetric_tridiagonal(self):
        """(diag, offdiag) of the similarity transform V^{1/2} A V^{-1/2}."""
        A = self.matrix
        return A.diag.copy(), np.sqrt(A.upper[:-1] * A.lower[1:])

    def count_above(self, sigma: float) -> int:
        """Number of eigenvalues greater than sigma (Sturm sequence / LDL^T inertia)."""
        d, e = self.symmetric_tridiagonal()
        e2 = e * e
        count = 0
        piv = d[0] - sigma
        tiny = np.finfo(float).tiny
        for i in range(len(d)):
            if i:
                piv = d[i] - sigma - e2[i - 1] / piv
            if piv == 0.0:
                piv = -tiny
            if piv > 0:
                count += 1
        return count


def polish_profile(grid: RadialGrid, w: np.ndarray, tol: float = 1e-12, maxit: int = 30) -> np.ndarray:
    """Newton on Δ_h w - w + w^3 = 0 so that the operator identities hold discretely."""
    lap = radial_laplacian(grid, outer="dirichlet")
    n = grid.n
    x = np.array(w[:n], dtype=float)
    prev = np.inf
    for _ in range(maxit):
        g = lap.matvec(x) - x + x**3
        J = lap.shifted(3 * x * x - 1.0)
        dx = solve_banded((1, 1), J.to_banded(), -g)
        x += dx
        step = np.max(np.abs(dx)) / np.max(np.abs(x))
        # quadratic convergence ends at the rounding floor, which grows like 1/h^2
        if step <= tol or (step < 1e-9 and step > 0.25 * prev):
            break
        prev = step
    else:
        raise SpectrumError("profile polishing did not converge", last=x)
    out = np.zeros(n + 1)
    out[:n] = x
    return out


def linearized_operator(gs: GroundState, polish: bool = True) -> LinearizedOperator:
    """L0 around the ground state on the ground-state grid.

    With ``polish`` the potential uses the discrete ground state (an exact zero
    of the discretized equation), so L0 w = 2 w^3 holds to rounding.
    """
    w = polish_profile(gs.grid, gs.w) if polish else np.array(gs.w, dtype=float)
    return LinearizedOperator(gs.grid, 3.0 * w * w, w=w)


def apply_L0(op: LinearizedOperator, phi: np.ndarray) -> np.ndarray:
    return op.apply(phi)


def resolve_shifted(op: LinearizedOperator, lam: complex, rhs: np.ndarray) -> np.ndarray:
    return op.resolve(lam, rhs)


def _rqi(op: LinearizedOperator, sigma: float, x: np.ndarray, deflate=None, maxit: int = 200,
         tol: float = 1e-13):
    """Inverse iteration at a fixed shift, then Rayleigh quotient refinement."""
    n = op.grid.n
    wts = op.weights
    A = op.matrix

    def normalize(v):
        if deflate is not None:
            v = v - deflate * np.sum(wts * deflate * v)
        return v / np.sqrt(np.sum(wts * v * v))

    x = normalize(x[:n])
    mu = float(np.sum(wts * x * A.matvec(x)))
    shift = sigma
    for it in range(1, maxit + 1):
        try:
            y = op.resolve(shift, op._pad(x))[:n]
        except ShiftAtSpectrum:
            return mu, x, it
        x_new = normalize(y)
        mu_new = float(np.sum(wts * x_new * A.matvec(x_new)))
        resid = np.sqrt(np.sum(wts * (A.matvec(x_new) - mu_new * x_new) ** 2))
        x = x_new
        if resid <= tol * max(1.0, abs(mu_new)):
            return mu_new, x, it
        # switch to Rayleigh shifts once the iterate has settled
        if abs(mu_new - mu) < 1e-3 * max(1.0, abs(mu_new)):
            shift = mu_new
        mu = mu_new
    raise SpectrumError("eigen-iteration did not converge", last=x)


def radial_spectrum(op: LinearizedOperator, maxit: int = 200) -> RadialSpectrum:
    """Principal eigenpair and the next radial eigenvalue of L0."""
    n = op.grid.n
    A = op.matrix
    upper_bound = float(np.max(A.diag + np.abs(A.lower) + np.abs(A.upper)))
    lower_bound = float(np.min(A.diag - np.abs(A.lower) - np.abs(A.upper)))
    sigma = upper_bound + 1e-3 * max(1.0, abs(upper_bound))
    x0 = op.w[:n] if op.w is not None else np.ones(n)
    mu0, phi0, it0 = _rqi(op, sigma, np.abs(x0) + 1e-3, maxit=maxit)
    if np.sum(op.weights * phi0) < 0:
        phi0 = -phi0
    # bracket the second eigenvalue by Sturm counts, then deflated inverse iteration
    lo, hi = lower_bound, mu0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        c = op.count_above(mid)
        if c >= 2:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6 * max(1.0, abs(hi)):
            break
    shift = hi + 1e-3 * (mu0 - hi)
    rng = np.random.default_rng(0)
    mu1, _, it1 = _rqi(op, shift, rng.standard_normal(n), deflate=phi0, maxit=maxit)
    return RadialSpectrum(mu0=mu0, phi0=op._pad(phi0), mu_next=mu1, iterations=it0 + it1)
