"""Uniform radial grids on [0, L] with quadrature weights for radial integrals over R^N."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import pi

import numpy as np

SUPPORTED_DIMS = (1, 2)


def sphere_area(N: int) -> float:
    """Measure of the unit sphere S^{N-1}: 2 points for N=1, 2*pi for N=2."""
    if N == 1:
        return 2.0
    if N == 2:
        return 2.0 * pi
    raise ValueError(f"unsupported dimension N={N}")


def ball_volume(N: int, radius: float) -> float:
    return sphere_area(N) * radius**N / N


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights on n+1 equispaced nodes.

    Odd panel counts close with a Simpson 3/8 panel at the far end.
    """
    if n < 2:
        raise ValueError("Simpson's rule needs at least two panels")
    q = np.zeros(n + 1)
    m = n if n % 2 == 0 else n - 3
    if m > 0:
        q[0:m + 1:2] += 2.0
        q[1:m:2] += 4.0
        q[0] -= 1.0
        q[m] -= 1.0
        q[: m + 1] *= h / 3.0
    if m != n:
        q[m:] += 3.0 * h / 8.0 * np.array([1.0, 3.0, 3.0, 1.0])
    return q


@dataclass(frozen=True)
class RadialGrid:
    """Nodes r_i = i*h on [0, L] tagged with a dimension N.

    ``weights`` are Simpson weights times |S^{N-1}| r^{N-1}, so that
    ``grid.integrate(f)`` approximates the integral of f(|y|) over R^N.
    ``volumes`` are the finite-volume cell measures (half cell at the origin,
    half cell at r = L) used by the discrete operators, which are exactly
    self-adjoint in that inner product.
    """

    N: int
    n: int
    L: float
    r: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)
    volumes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N not in SUPPORTED_DIMS:
            raise ValueError(f"dimension must be 1 or 2, got {self.N}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"need at least 2 intervals, got n={self.n}")
        if not self.L > 0:
            raise ValueError(f"truncation radius must be positive, got L={self.L}")
        n, L = int(self.n), float(self.L)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", L)
        h = L / n
        r = np.arange(n + 1) * h
        r[-1] = L
        s = sphere_area(self.N)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "weights", s * r ** (self.N - 1) * simpson_weights(n, h))
        faces = np.concatenate(([0.0], r[:-1] + 0.5 * h, [L]))
        object.__setattr__(self, "volumes", s * np.diff(faces**self.N) / self.N)

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def faces(self) -> np.ndarray:
        """Interior cell faces r_{i+1/2}, i = 0..n-1."""
        return self.r[:-1] + 0.5 * self.h

    def face_areas(self) -> np.ndarray:
        return sphere_area(self.N) * self.faces ** (self.N - 1)

    def integrate(self, f: np.ndarray, radius: float | None = None) -> float:
        """Simpson integral of a radial grid function over the ball of given radius."""
        f = np.asarray(f)
        if radius is None or radius >= self.L:
            return float(self.weights @ f)
        k = int(np.floor(radius / self.h + 1e-9))
        if k == 0:
            return 0.0
        if k == 1:
            g = sphere_area(self.N) * self.r[:2] ** (self.N - 1) * f[:2]
            return float(0.5 * self.h * g.sum())
        sub = RadialGrid(self.N, k, self.r[k])
        return float(sub.weights @ f[: k + 1])

    def coarsen(self) -> "RadialGrid":
        """Every other node; requires even n."""
        if self.n % 2:
            raise ValueError("cannot coarsen a grid with odd n")
        return RadialGrid(self.N, self.n // 2, self.L)


@dataclass(frozen=True)
class Tridiagonal:
    """Rows of a tridiagonal matrix: ``lower[i]`` multiplies x[i-1], ``upper[i]`` x[i+1]."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __len__(self):
        return len(self.diag)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[:-1] += self.upper[:-1] * x[1:]
        y[1:] += self.lower[1:] * x[:-1]
        return y

    def shifted(self, extra_diag) -> "Tridiagonal":
        return Tridiagonal(self.lower, self.diag + extra_diag, self.upper)

    def to_banded(self, dtype=float) -> np.ndarray:
        """(3, m) layout for ``scipy.linalg.solve_banded((1, 1), ...)``."""
        ab = np.zeros((3, len(self)), dtype=dtype)
        ab[0, 1:] = self.upper[:-1]
        ab[1] = self.diag
        ab[2, :-1] = self.lower[1:]
        return ab

    def to_dense(self) -> np.ndarray:
        m = len(self)
        A = np.diag(self.diag.astype(np.result_type(self.diag, float)))
        A[np.arange(m - 1), np.arange(1, m)] = self.upper[:-1]
        A[np.arange(1, m), np.arange(m - 1)] = self.lower[1:]
        return A


def radial_laplacian(grid: RadialGrid, coef: np.ndarray | None = None, outer: str = "dirichlet") -> Tridiagonal:
    """Conservative finite-volume discretization of r^{1-N} d/dr(c r^{N-1} d/dr).

    ``coef`` holds c at the n interior faces r_{i+1/2} (default 1). The origin
    row uses the half cell [0, h/2], which for N=2 reproduces 2*phi''(0).
    ``outer="dirichlet"`` drops node n (value 0); ``"neumann"`` keeps it with
    zero flux through r = L.
    """
    if outer not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown outer boundary {outer!r}")
    n, h = grid.n, grid.h
    flux = grid.face_areas() / h
    if coef is not None:
        flux = flux * np.asarray(coef)
    m = n if outer == "dirichlet" else n + 1
    right = np.zeros(m)
    left = np.zeros(m)
    right[: min(m, n)] = flux[: min(m, n)]
    left[1:] = flux[: m - 1]
    vol = grid.volumes[:m]
    lower = left / vol
    upper = right / vol
    diag = -(left + right) / vol
    if outer == "dirichlet":
        upper[-1] = 0.0
    return Tridiagonal(lower, diag, upper)
