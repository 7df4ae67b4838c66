"""Periodic spatial grid on [-L, L) plus uniform time grid, and the discrete
calculus (spectral derivatives, norms, inner products) shared by every solver.

Convention: fields live in physical space as real arrays, shape (N,) for
scalar fields and (N, 3) for sphere-valued / tangent fields.  All transforms
are internal.  The frequency lattice is xi_k = pi*k/L for k = -N/2 .. N/2-1;
real fields are handled through the one-sided rfft half of that lattice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridSpec",
    "as_scalar_field",
    "as_vec3_field",
    "derivative",
    "norm",
    "inner",
    "support_radius",
    "minimum_half_length",
    "check_domain_size",
]


@dataclass(frozen=True)
class GridSpec:
    """Spatial grid on [-L, L) with N points and a uniform time grid.

    dx = 2L/N exactly; horizon T = dt * n_steps.
    """

    half_length: float
    n_points: int
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.half_length <= 0:
            raise ValueError("half_length must be positive")
        if self.n_points % 2 != 0 or self.n_points < 8:
            raise ValueError("n_points must be even and >= 8")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_length / self.n_points

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    @property
    def x(self) -> np.ndarray:
        """Grid nodes x_j = -L + j*dx, j = 0 .. N-1."""
        n, L = self.n_points, self.half_length
        return -L + (2.0 * L / n) * np.arange(n)

    @property
    def freq(self) -> np.ndarray:
        """One-sided frequency lattice xi_k = pi*k/L, k = 0 .. N/2."""
        return (np.pi / self.half_length) * np.arange(self.n_points // 2 + 1)

    @property
    def dxi(self) -> float:
        """Frequency spacing pi/L."""
        return np.pi / self.half_length

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def with_time(self, dt: float, n_steps: int) -> "GridSpec":
        return GridSpec(self.half_length, self.n_points, dt, n_steps)


def as_scalar_field(values, grid: GridSpec) -> np.ndarray:
    f = np.asarray(values, dtype=float)
    if f.shape != (grid.n_points,):
        raise ValueError(f"scalar field must have shape ({grid.n_points},), got {f.shape}")
    return f


def as_vec3_field(values, grid: GridSpec) -> np.ndarray:
    f = np.asarray(values, dtype=float)
    if f.shape != (grid.n_points, 3):
        raise ValueError(f"vec3 field must have shape ({grid.n_points}, 3), got {f.shape}")
    return f


def _check_field(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape not in ((grid.n_points,), (grid.n_points, 3)):
        raise ValueError(f"field shape {f.shape} does not match grid with N={grid.n_points}")
    return f


def derivative(f: np.ndarray, grid: GridSpec, order: int) -> np.ndarray:
    """Spectral derivative of order 1 or 2; exact for band-limited fields.

    The Nyquist mode is zeroed for odd orders (its first derivative has no
    real representative on the grid).
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    f = _check_field(f, grid)
    spec = np.fft.rfft(f, axis=0)
    xi = grid.freq
    if f.ndim == 2:
        xi = xi[:, None]
    if order == 1:
        spec = spec * (1j * xi)
        spec[grid.n_points // 2] = 0.0
    else:
        spec = spec * (-(xi**2))
    return np.fft.irfft(spec, n=grid.n_points, axis=0)


def norm(f: np.ndarray, grid: GridSpec, kind: str = "L2", k: int | None = None) -> float:
    """Discrete norm: L2 = sqrt(dx * sum |f_j|^2), Hdot k = L2 of the k-th
    derivative, H1 = sqrt(L2^2 + Hdot1^2), Linf = max pointwise magnitude.

    Pointwise magnitude of a vec3 field is the Euclidean norm of the triple.
    """
    f = _check_field(f, grid)
    if kind.startswith("Hdot_"):
        k = int(kind[5:])
        kind = "Hdot"
    if kind == "L2":
        return float(np.sqrt(grid.dx * np.sum(f * f)))
    if kind == "Linf":
        if f.ndim == 2:
            return float(np.sqrt(np.max(np.sum(f * f, axis=1))))
        return float(np.max(np.abs(f)))
    if kind == "H1":
        l2 = norm(f, grid, "L2")
        h1 = norm(f, grid, "Hdot", k=1)
        return float(np.hypot(l2, h1))
    if kind == "Hdot":
        if k is None or k < 1:
            raise ValueError("Hdot norm requires k >= 1")
        if k > grid.n_points // 4:
            raise ValueError(f"Hdot order k={k} exceeds N/4={grid.n_points // 4}")
        # k-th derivative through the spectrum directly; Parseval gives the norm
        spec = np.fft.rfft(f, axis=0)
        xi = grid.freq
        if f.ndim == 2:
            xi = xi[:, None]
        spec = spec * (xi**k)
        if k % 2 == 1:
            spec[grid.n_points // 2] = 0.0
        return float(np.sqrt(grid.dx * _spectrum_sumsq(spec, grid.n_points)))
    raise ValueError(f"unknown norm kind {kind!r}")


def sobolev_norm(f: np.ndarray, grid: GridSpec, k: int) -> float:
    """Full H^k norm sqrt(L2^2 + Hdot_k^2); H^0 is the L2 norm."""
    if k == 0:
        return norm(f, grid, "L2")
    return float(np.hypot(norm(f, grid, "L2"), norm(f, grid, "Hdot", k=k)))


def _spectrum_sumsq(spec: np.ndarray, n: int) -> float:
    """sum_j |f_j|^2 from the one-sided rfft spectrum (Parseval)."""
    mag2 = np.abs(spec) ** 2
    total = mag2[0].sum() + mag2[n // 2].sum() + 2.0 * mag2[1 : n // 2].sum()
    return float(total) / n


def inner(f: np.ndarray, g: np.ndarray, grid: GridSpec) -> float:
    """Discrete L2 pairing dx * sum_j f_j . g_j."""
    f = _check_field(f, grid)
    g = _check_field(g, grid)
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {g.shape}")
    return float(grid.dx * np.sum(f * g))


def support_radius(f: np.ndarray, grid: GridSpec, tol: float = 1e-9) -> float:
    """Outermost |x_j| at which f deviates from its boundary value.

    The boundary value is f at the leftmost node, which represents the
    constant state at infinity under the periodic truncation.
    """
    f = _check_field(f, grid)
    dev = f - f[0]
    if dev.ndim == 2:
        mag = np.sqrt(np.sum(dev * dev, axis=1))
    else:
        mag = np.abs(dev)
    active = np.abs(grid.x)[mag > tol]
    return float(active.max()) if active.size else 0.0


def minimum_half_length(support: float, horizon: float, eps_min: float, margin: float = 2.0) -> float:
    """Domain half-length needed so wrap-around (wave speed 1/sqrt(eps))
    never reaches the active region within the horizon."""
    if eps_min <= 0:
        raise ValueError("eps_min must be positive")
    return support + horizon / np.sqrt(eps_min) + margin


def check_domain_size(grid: GridSpec, support: float, horizon: float, eps_min: float, margin: float = 2.0) -> None:
    needed = minimum_half_length(support, horizon, eps_min, margin)
    if grid.half_length < needed:
        raise ValueError(
            f"half_length {grid.half_length} too small: need >= {needed:.3f} "
            f"(support {support:.3f} + horizon/sqrt(eps_min) {horizon / np.sqrt(eps_min):.3f} + margin {margin})"
        )
