"""Spatially homogeneous noise: spectral densities (fractional, mollified,
rescaled), their moments, and synthesis of Wiener increments on the grid.

Synthesis convention.  The field increment is

    dW(x_j) = sum_k sqrt(M_k) (dB_k cos(xi_k x_j) + dB'_k sin(xi_k x_j))

over the one-sided lattice xi_k = pi k/L, k = 0 .. N/2-1 (no sine at k=0),
where M_k is the TWO-SIDED mass of the k-th frequency cell,

    M_0 = 2 * int_{0}^{dxi/2} m,     M_k = 2 * int_{xi_k - dxi/2}^{xi_k + dxi/2} m.

Cell masses rather than midpoint values m(xi_k)*dxi make the pointwise
variance sum to the full two-sided mass c0 (so the energy bookkeeping sees
the same c0 the friction enhancement uses) and keep the k=0 cell finite for
densities with an integrable origin singularity (H > 1/2).  The discrete
covariance target is Gamma(r) = sum_k M_k cos(xi_k r).

Frequency truncation at the grid Nyquist is the regularization of the
infinite-mass fractional density; everything driven by it is checked for
refinement stability in L2 rather than pointwise.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .grid import GridSpec

__all__ = [
    "SpectralDensity",
    "MollifierSpec",
    "NoiseTable",
    "Moments",
    "make_fractional_density",
    "make_generic_density",
    "gaussian_mollifier",
    "mollify",
    "rescale",
    "moments",
    "cell_masses",
    "make_noise_table",
    "coarsen",
    "sample_increment",
    "sample_all_increments",
    "apply_Q_eps",
    "check_scaling_identity",
    "empirical_lag_covariance",
    "dump_table",
    "load_table",
]


class SpectralDensity:
    """Even nonnegative density m on the frequency line.

    tag is one of generic / fractional / mollified / rescaled; rescaled
    densities carry the scale eps.  Cell masses and moments are cached on
    the object, so share one instance per configuration.
    """

    def __init__(self, m, tag, hurst=None, a_H=1.0, eps=None):
        self.m = m
        self.tag = tag
        self.hurst = hurst
        self.a_H = a_H
        self.eps = eps
        self._mass_cache = {}
        self._moments = None

    def __call__(self, xi):
        return self.m(xi)


@dataclass(frozen=True)
class MollifierSpec:
    """Fourier transform of the smoothing kernel plus its decay exponents:
    1 - F(x) <= C|x|^a near 0, |F(x)| <= C|x|^b for x >= 1."""

    fourier_transform: object
    a: float
    b: float

    def __post_init__(self):
        f0 = float(self.fourier_transform(0.0))
        if abs(f0 - 1.0) > 1e-12:
            raise ValueError(f"mollifier transform must equal 1 at 0, got {f0}")


class Moments:
    __slots__ = ("c0", "c1")

    def __init__(self, c0, c1):
        self.c0 = c0
        self.c1 = c1

    @property
    def finite(self):
        return math.isfinite(self.c0) and math.isfinite(self.c1)

    def __iter__(self):
        return iter((self.c0, self.c1))

    def __repr__(self):
        return f"Moments(c0={self.c0!r}, c1={self.c1!r})"


def make_fractional_density(H: float, a_H: float = 1.0) -> SpectralDensity:
    """m(xi) = a_H |xi|^{1-2H}; infinite total mass, usable only through the
    grid's frequency truncation."""
    if not (0.5 <= H < 1.0):
        raise ValueError(f"H must lie in [1/2, 1), got {H}")
    if a_H <= 0:
        raise ValueError("a_H must be positive")
    expo = 1.0 - 2.0 * H

    def m(xi):
        axi = np.abs(xi)
        if expo == 0.0:
            return a_H * np.ones_like(np.asarray(axi, dtype=float))
        with np.errstate(divide="ignore"):
            return a_H * np.where(axi > 0, axi**expo, np.inf)

    return SpectralDensity(m, "fractional", hurst=H, a_H=a_H)


def make_generic_density(m) -> SpectralDensity:
    return SpectralDensity(m, "generic")


def gaussian_mollifier() -> MollifierSpec:
    """F(eta)(xi) = exp(-xi^2/2): a = 2, super-polynomial tail (b = -inf)."""
    return MollifierSpec(lambda xi: np.exp(-np.asarray(xi, dtype=float) ** 2 / 2.0), 2.0, -math.inf)


def mollify(base: SpectralDensity, moll: MollifierSpec) -> SpectralDensity:
    if base.tag != "fractional":
        raise ValueError("mollify expects a fractional base density")
    H = base.hurst
    # exponent admissibility for this H
    if moll.a < H - 0.5:
        raise ValueError(f"mollifier near-zero exponent a={moll.a} < H-1/2={H - 0.5}")
    if not (moll.b < H - 2.0):
        raise ValueError(f"mollifier tail exponent b={moll.b} must be < H-2={H - 2.0}")
    probe = np.linspace(0.0, 8.0, 33)
    vals = np.asarray(moll.fourier_transform(probe), dtype=float)
    if np.any(vals < -1e-12) or np.any(vals > 1.0 + 1e-12):
        raise ValueError("mollifier transform must take values in [0, 1]")

    base_m, ft = base.m, moll.fourier_transform

    def m(xi):
        return np.asarray(ft(xi), dtype=float) ** 2 * base_m(xi)

    return SpectralDensity(m, "mollified", hurst=H, a_H=base.a_H)


def rescale(base: SpectralDensity, eps: float) -> SpectralDensity:
    """m_eps(xi) = sqrt(eps) * m(sqrt(eps) xi): mass-preserving shrink of the
    frequency content; the second moment grows like 1/eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if base.tag == "fractional":
        raise ValueError("rescale requires a finite-mass density; mollify first")
    root = math.sqrt(eps)
    base_m = base.m

    def m(xi):
        return root * base_m(root * np.asarray(xi, dtype=float))

    return SpectralDensity(m, "rescaled", hurst=base.hurst, a_H=base.a_H, eps=eps)


def moments(d: SpectralDensity) -> Moments:
    """(c0, c1) = (total mass, second moment) by adaptive quadrature on the
    half line, doubled.  Fractional densities are flagged infinite."""
    if d._moments is not None:
        return d._moments
    if d.tag == "fractional":
        d._moments = Moments(math.inf, math.inf)
        return d._moments

    def half_integral(f):
        # split at 1 so an integrable origin singularity and the tail are
        # handled by separate adaptive passes
        v1, e1 = quad(f, 0.0, 1.0, epsrel=1e-10, epsabs=1e-13, limit=200)
        v2, e2 = quad(f, 1.0, np.inf, epsrel=1e-10, epsabs=1e-13, limit=200)
        val, err = v1 + v2, e1 + e2
        if not math.isfinite(val) or err > 1e-8 * max(abs(val), 1e-12):
            raise ArithmeticError(
                f"moment quadrature did not converge: value={val}, error estimate={err}"
            )
        return val

    mf = lambda x: float(np.asarray(d.m(x)).reshape(-1)[0])
    c0 = 2.0 * half_integral(mf)
    c1 = 2.0 * half_integral(lambda x: x * x * mf(x))
    d._moments = Moments(c0, c1)
    return d._moments


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def cell_masses(d: SpectralDensity, grid: GridSpec) -> np.ndarray:
    """Two-sided masses M_k of the N/2 frequency cells (see module docstring).

    Cell 0, which may contain an integrable singularity, uses adaptive
    quadrature; the rest use fixed Gauss-Legendre on each cell.
    """
    key = (grid.half_length, grid.n_points)
    cached = d._mass_cache.get(key)
    if cached is not None:
        return cached
    half = grid.n_points // 2
    dxi = grid.dxi
    masses = np.empty(half)

    mf = lambda x: float(np.asarray(d.m(x)).reshape(-1)[0])
    m0, err0 = quad(mf, 0.0, dxi / 2.0, epsrel=1e-10, epsabs=1e-14, limit=200)
    if not math.isfinite(m0):
        raise ArithmeticError("cell-0 mass quadrature diverged")
    masses[0] = 2.0 * m0

    centers = dxi * np.arange(1, half)
    # map the 32 reference nodes onto every cell at once
    pts = centers[:, None] + (dxi / 2.0) * _GL_NODES[None, :]
    vals = np.asarray(d.m(pts), dtype=float)
    masses[1:] = 2.0 * (dxi / 2.0) * vals @ _GL_WEIGHTS

    if np.any(masses < -1e-12):
        raise ArithmeticError("negative cell mass; density is not nonnegative")
    masses[masses < 0] = 0.0
    d._mass_cache[key] = masses
    return masses


class NoiseTable:
    """One frozen draw of standardized Gaussian increments, shape
    (n_steps, 2, N/2), entries ~ N(0, dt).  Row [step, 0, k] drives the
    cosine at frequency xi_k, row [step, 1, k] the sine (unused at k=0).

    The same table can be read through different densities, which is what
    couples every process of a CLT experiment pathwise.
    """

    def __init__(self, seed: int, grid: GridSpec, increments: np.ndarray):
        if increments.shape != (grid.n_steps, 2, grid.n_points // 2):
            raise ValueError(
                f"increment shape {increments.shape} does not match grid "
                f"({grid.n_steps}, 2, {grid.n_points // 2})"
            )
        self.seed = seed
        self.grid = grid
        self.increments = increments
        self.increments.setflags(write=False)


def make_noise_table(seed: int, grid: GridSpec) -> NoiseTable:
    rng = np.random.default_rng(seed)
    inc = rng.standard_normal((grid.n_steps, 2, grid.n_points // 2)) * math.sqrt(grid.dt)
    return NoiseTable(seed, grid, inc)


def coarsen(table: NoiseTable, factor: int) -> NoiseTable:
    """Aggregate consecutive increments in groups of `factor` (a divisor of
    n_steps): the coarse table drives a dt*factor discretization of the same
    Wiener path."""
    if factor < 1 or table.grid.n_steps % factor != 0:
        raise ValueError(f"factor {factor} must divide n_steps {table.grid.n_steps}")
    if factor == 1:
        return table
    g = table.grid
    coarse_grid = GridSpec(g.half_length, g.n_points, g.dt * factor, g.n_steps // factor)
    inc = table.increments.reshape(coarse_grid.n_steps, factor, 2, g.n_points // 2).sum(axis=1)
    return NoiseTable(table.seed, coarse_grid, inc)


def _synthesize(masses: np.ndarray, cos_coef: np.ndarray, sin_coef: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Assemble dW on the grid nodes from per-mode coefficients via irfft.

    With x_j = -L + j dx the phase is xi_k x_j = -pi k + 2 pi k j / N, hence
    the (-1)^k factors relative to the DFT kernel.
    """
    n = grid.n_points
    half = n // 2
    amp = np.sqrt(masses)
    signs = np.where(np.arange(half) % 2 == 0, 1.0, -1.0)
    spec = np.zeros(cos_coef.shape[:-1] + (half + 1,), dtype=complex)
    spec[..., 0] = n * amp[0] * cos_coef[..., 0]
    scale = (n / 2.0) * amp[1:] * signs[1:]
    spec[..., 1:half] = scale * (cos_coef[..., 1:] - 1j * sin_coef[..., 1:])
    return np.fft.irfft(spec, n=n, axis=-1)


def sample_increment(table: NoiseTable, d: SpectralDensity, step: int) -> np.ndarray:
    """dW field for one time step, read (never regenerated) from the table."""
    if not (0 <= step < table.grid.n_steps):
        raise IndexError(f"step {step} out of range [0, {table.grid.n_steps})")
    masses = cell_masses(d, table.grid)
    row = table.increments[step]
    return _synthesize(masses, row[0], row[1], table.grid)


def sample_all_increments(table: NoiseTable, d: SpectralDensity) -> np.ndarray:
    """(n_steps, N) array of every increment field; one vectorized transform."""
    masses = cell_masses(d, table.grid)
    return _synthesize(masses, table.increments[:, 0, :], table.increments[:, 1, :], table.grid)


def apply_Q_eps(f: np.ndarray, moll: MollifierSpec, eps: float, grid: GridSpec) -> np.ndarray:
    """Smooth at scale sqrt(eps): multiply mode k by F(eta)(sqrt(eps) xi_k)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    f = np.asarray(f, dtype=float)
    spec = np.fft.rfft(f, axis=-1)
    factor = np.asarray(moll.fourier_transform(math.sqrt(eps) * grid.freq), dtype=float)
    return np.fft.irfft(spec * factor, n=grid.n_points, axis=-1)


def empirical_lag_covariance(fields: np.ndarray, grid: GridSpec, lag_indices) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of Cov[f(x), f(x+r)] per lag, from an
    (n_samples, N) ensemble.  Each sample contributes its base-point average,
    so the per-sample statistics are independent and the stderr is honest.
    """
    lag_indices = np.asarray(lag_indices, dtype=int)
    per_sample = np.empty((fields.shape[0], len(lag_indices)))
    for i, s in enumerate(lag_indices):
        per_sample[:, i] = np.mean(fields * np.roll(fields, -s, axis=-1), axis=-1)
    mean = per_sample.mean(axis=0)
    stderr = per_sample.std(axis=0, ddof=1) / math.sqrt(fields.shape[0])
    return mean, stderr


@dataclass(frozen=True)
class ScalingIdentityReport:
    eps: float
    lags: np.ndarray
    cov_coupled: np.ndarray
    cov_direct: np.ndarray
    stderr: np.ndarray
    max_discrepancy_sigmas: float
    passed: bool


def check_scaling_identity(
    moll: MollifierSpec,
    H: float,
    eps: float,
    grid: GridSpec,
    n_samples: int,
    seed: int = 0,
) -> ScalingIdentityReport:
    """Covariance test of the coupling construction: eps^{(1-H)/2} Q^eps
    applied to fractional increments must match, in law, increments drawn
    directly from the rescaled mollified density."""
    if not (0.5 <= H < 1.0):
        raise ValueError(f"H must lie in [1/2, 1), got {H}")
    lag_indices = np.unique(np.linspace(0, grid.n_points // 8, 10, dtype=int))
    lags = lag_indices * grid.dx
    if n_samples == 0 or grid.n_steps == 0:
        z = np.zeros(len(lag_indices))
        return ScalingIdentityReport(eps, lags, z, z, z, 0.0, True)

    mc_grid = GridSpec(grid.half_length, grid.n_points, grid.dt, n_samples)
    frac = make_fractional_density(H)
    direct_density = rescale(mollify(frac, moll), eps)

    table_a = make_noise_table(seed, mc_grid)
    raw = sample_all_increments(table_a, frac)
    coupled = eps ** ((1.0 - H) / 2.0) * apply_Q_eps(raw, moll, eps, mc_grid)

    table_b = make_noise_table(seed + 1, mc_grid)
    direct = sample_all_increments(table_b, direct_density)

    cov_a, se_a = empirical_lag_covariance(coupled, mc_grid, lag_indices)
    cov_b, se_b = empirical_lag_covariance(direct, mc_grid, lag_indices)
    stderr = np.hypot(se_a, se_b)
    sigmas = float(np.max(np.abs(cov_a - cov_b) / np.where(stderr > 0, stderr, 1.0)))
    return ScalingIdentityReport(eps, lags, cov_a, cov_b, stderr, sigmas, sigmas <= 3.0)


_HEADER = struct.Struct("<qii")


def dump_table(table: NoiseTable, path) -> None:
    """Little-endian replay dump: int64 seed, int32 N, int32 n_steps, then
    the (n_steps, 2, N/2) float64 increments row-major."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(table.seed, table.grid.n_points, table.grid.n_steps))
        fh.write(np.ascontiguousarray(table.increments, dtype="<f8").tobytes())


def load_table(path, grid: GridSpec) -> NoiseTable:
    with open(path, "rb") as fh:
        seed, n, n_steps = _HEADER.unpack(fh.read(_HEADER.size))
        if n != grid.n_points or n_steps != grid.n_steps:
            raise ValueError(
                f"table file holds N={n}, n_steps={n_steps}; grid expects "
                f"N={grid.n_points}, n_steps={grid.n_steps}"
            )
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(n_steps, 2, n // 2).copy()
    return NoiseTable(seed, grid, data)
