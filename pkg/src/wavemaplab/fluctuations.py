"""Linear SPDE machinery around the heat-flow limit: the auxiliary processes
z_eps and z, the fluctuation limits rho_eps and rho, the rescaled deviation
y_eps, and the fixed-point operator Lambda.

Every solver is the same semi-implicit step

    (I - (dt/gamma0) dxx) s_{n+1} = s_n + (dt/gamma0) S_n + (1/gamma0) G_n dW_n

with left-endpoint source S_n and noise coefficient G_n; stochastic
convolutions are never quadratured directly, they fall out of the stepping.
Because the step is linear, the direct recursion for rho coincides exactly
(in discrete arithmetic) with the fixed point of Theta, which is what makes
the rho = Lambda(z) cross-check sharp rather than approximate.

All processes of one experiment read the one shared NoiseTable through the
fractional density; the rescaled wave-map driver is eps^{(1-H)/2} Q^eps of
those same increments.  That is the pathwise coupling the CLT comparison
needs, and audit_coupling refuses to proceed without object-identical tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, derivative
from .noise import (
    MollifierSpec,
    NoiseTable,
    apply_Q_eps,
    make_fractional_density,
    sample_all_increments,
)

__all__ = [
    "FluctuationInputs",
    "audit_coupling",
    "solve_z_eps",
    "solve_z_limit",
    "solve_rho",
    "compute_y_eps",
    "apply_theta",
    "solve_lambda",
    "LambdaResult",
    "trajectory_norm",
    "heat_kernel",
    "coupled_wave_increments",
]


class FluctuationInputs:
    """Coupled references for one path: wave-map trajectory (u_eps, v_eps) at
    full step resolution, heat-flow trajectory u, the shared NoiseTable, and
    the scaling parameters.  Wave trajectories may be omitted for the
    limit-process solvers that do not read them."""

    def __init__(self, heat_u, table: NoiseTable, moll: MollifierSpec, H: float,
                 eps: float, gamma0: float, grid: GridSpec,
                 wave_u=None, wave_v=None):
        n_expected = grid.n_steps + 1
        if heat_u.shape != (n_expected, grid.n_points, 3):
            raise ValueError(
                f"heat trajectory shape {heat_u.shape} != ({n_expected}, {grid.n_points}, 3)"
            )
        for name, arr in (("wave_u", wave_u), ("wave_v", wave_v)):
            if arr is not None and arr.shape != heat_u.shape:
                raise ValueError(f"{name} shape {arr.shape} does not match heat trajectory")
        if (wave_u is None) != (wave_v is None):
            raise ValueError("wave_u and wave_v must be supplied together")
        if table.grid.n_steps != grid.n_steps or table.grid.n_points != grid.n_points:
            raise ValueError("noise table grid does not match the trajectory grid")
        if not (0.5 <= H < 1.0):
            raise ValueError(f"H must lie in [1/2, 1), got {H}")
        self.heat_u = heat_u
        self.wave_u = wave_u
        self.wave_v = wave_v
        self.table = table
        self.moll = moll
        self.H = H
        self.eps = eps
        self.gamma0 = gamma0
        self.grid = grid
        self.frac_density = make_fractional_density(H)

    @property
    def initial_gap(self) -> np.ndarray:
        """eps^{H/2-1} (u0_eps - u0); zero when wave data is absent."""
        if self.wave_u is None:
            return np.zeros((self.grid.n_points, 3))
        return self.eps ** (self.H / 2.0 - 1.0) * (self.wave_u[0] - self.heat_u[0])

    def require_wave(self, op: str):
        if self.wave_u is None:
            raise ValueError(f"{op} requires the coupled wave-map trajectory")


def audit_coupling(inputs: FluctuationInputs, driver_table: NoiseTable) -> None:
    """Assert the table in the inputs IS the table that drove the wave map."""
    if inputs.table is not driver_table:
        raise ValueError(
            "coupling audit failed: fluctuation inputs and wave-map driver "
            "hold different NoiseTable objects"
        )


def coupled_wave_increments(table: NoiseTable, moll: MollifierSpec, H: float, eps: float) -> np.ndarray:
    """dW^eps fields for the wave map, defined pathwise from the shared
    fractional increments: eps^{(1-H)/2} Q^eps dW^H."""
    raw = sample_all_increments(table, make_fractional_density(H))
    return eps ** ((1.0 - H) / 2.0) * apply_Q_eps(raw, moll, eps, table.grid)


def _semi_implicit_linear(grid: GridSpec, gamma0: float, init: np.ndarray,
                          source=None, noise_products=None) -> np.ndarray:
    """Shared stepper; source(n, s) evaluated at the left endpoint,
    noise_products[n] is the already-multiplied field G_n dW_n."""
    n_steps = grid.n_steps
    out = np.empty((n_steps + 1, grid.n_points, 3))
    out[0] = init
    s = np.array(init, dtype=float)
    inv_denom = 1.0 / (1.0 + (grid.dt / gamma0) * grid.freq**2)
    for n in range(n_steps):
        rhs = s
        if source is not None:
            rhs = rhs + (grid.dt / gamma0) * source(n, s)
        if noise_products is not None:
            rhs = rhs + noise_products[n] / gamma0
        spec = np.fft.rfft(rhs, axis=0)
        s = np.fft.irfft(spec * inv_denom[:, None], n=grid.n_points, axis=0)
        out[n + 1] = s
    return out


def _wave_noise_products(inputs: FluctuationInputs) -> np.ndarray:
    """(u_eps x v_eps) Q^eps dW^H at the left endpoints."""
    dw = sample_all_increments(inputs.table, inputs.frac_density)
    dw = apply_Q_eps(dw, inputs.moll, inputs.eps, inputs.grid)
    g = np.cross(inputs.wave_u[:-1], inputs.wave_v[:-1])
    return g * dw[:, :, None]


def _limit_noise_products(inputs: FluctuationInputs) -> np.ndarray:
    """(u x u_t) dW^H with u_t the heat-flow update quotient."""
    dw = sample_all_increments(inputs.table, inputs.frac_density)
    q = np.diff(inputs.heat_u, axis=0) / inputs.grid.dt
    g = np.cross(inputs.heat_u[:-1], q)
    return g * dw[:, :, None]


def solve_z_eps(inputs: FluctuationInputs) -> np.ndarray:
    """gamma0 dz = dxx z dt + (u_eps x v_eps) Q^eps dW^H, started from the
    rescaled initial gap."""
    inputs.require_wave("solve_z_eps")
    return _semi_implicit_linear(
        inputs.grid, inputs.gamma0, inputs.initial_gap,
        noise_products=_wave_noise_products(inputs),
    )


def solve_z_limit(inputs: FluctuationInputs) -> np.ndarray:
    """Limit version: deterministic coefficients (u x u_t), no Q^eps, zero
    initial value, same table."""
    init = np.zeros((inputs.grid.n_points, 3))
    return _semi_implicit_linear(
        inputs.grid, inputs.gamma0, init,
        noise_products=_limit_noise_products(inputs),
    )


def _reaction(inputs: FluctuationInputs, carrier: np.ndarray):
    """Source |Du|^2 s + 2 (Ds . Du) carrier_n with Du from the heat flow."""
    grid = inputs.grid
    du = np.empty_like(inputs.heat_u)
    for i in range(inputs.heat_u.shape[0]):
        du[i] = derivative(inputs.heat_u[i], grid, 1)
    gg = np.sum(du * du, axis=2)

    def source(n, s):
        ds = derivative(s, grid, 1)
        dot = np.sum(ds * du[n], axis=1)
        return gg[n][:, None] * s + 2.0 * dot[:, None] * carrier[n]

    return source


def solve_rho(inputs: FluctuationInputs, variant: str) -> np.ndarray:
    """rho_eps couples to the wave-map path (carrier u_eps, noise through
    Q^eps, initial gap); rho_limit is the all-limit equation (carrier u,
    plain dW^H, zero start)."""
    if variant == "rho_eps":
        inputs.require_wave("solve_rho(rho_eps)")
        source = _reaction(inputs, inputs.wave_u[:-1])
        noise = _wave_noise_products(inputs)
        init = inputs.initial_gap
    elif variant == "rho_limit":
        source = _reaction(inputs, inputs.heat_u[:-1])
        noise = _limit_noise_products(inputs)
        init = np.zeros((inputs.grid.n_points, 3))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return _semi_implicit_linear(inputs.grid, inputs.gamma0, init, source=source, noise_products=noise)


def compute_y_eps(wave_u: np.ndarray, heat_u: np.ndarray, eps: float, H: float) -> np.ndarray:
    """Rescaled deviation eps^{H/2-1} (u_eps - u), every step."""
    if wave_u.shape != heat_u.shape:
        raise ValueError(f"trajectory shapes differ: {wave_u.shape} vs {heat_u.shape}")
    return eps ** (H / 2.0 - 1.0) * (wave_u - heat_u)


def apply_theta(v_traj: np.ndarray, xi_traj: np.ndarray, heat_u: np.ndarray,
                gamma0: float, grid: GridSpec) -> np.ndarray:
    """Theta_xi(v): the two heat-semigroup reaction convolutions of v plus xi,
    realized by stepping the same semi-implicit scheme from zero."""
    if v_traj.shape != xi_traj.shape or v_traj.shape != heat_u.shape:
        raise ValueError("apply_theta requires matched trajectory shapes")
    source = _reaction_arrays(heat_u, grid, heat_u[:-1], v_traj)
    w = _semi_implicit_linear(grid, gamma0, np.zeros((grid.n_points, 3)), source=source)
    return w + xi_traj


def _reaction_arrays(heat_u: np.ndarray, grid: GridSpec, carrier: np.ndarray, v_traj: np.ndarray):
    """Reaction source evaluated on a FIXED input trajectory v rather than the
    evolving state (the Theta convolution form)."""
    du = np.empty_like(heat_u)
    for i in range(heat_u.shape[0]):
        du[i] = derivative(heat_u[i], grid, 1)
    gg = np.sum(du * du, axis=2)

    def source(n, _s):
        vn = v_traj[n]
        ds = derivative(vn, grid, 1)
        dot = np.sum(ds * du[n], axis=1)
        return gg[n][:, None] * vn + 2.0 * dot[:, None] * carrier[n]

    return source


def trajectory_norm(traj: np.ndarray, grid: GridSpec) -> float:
    """L2(0,T;L2) norm by the trapezoid rule in time."""
    sq = grid.dx * np.sum(traj * traj, axis=(1, 2))
    if len(sq) == 1:
        return 0.0
    w = np.full(len(sq), grid.dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return float(math.sqrt(np.sum(w * sq)))


@dataclass
class LambdaResult:
    traj: np.ndarray
    iterations: int
    residual: float
    bound_constant: float  # |Lambda(xi)| / |xi| in L2(0,T;L2)


def solve_lambda(xi_traj: np.ndarray, heat_u: np.ndarray, gamma0: float, grid: GridSpec,
                 tol: float = 1e-10, max_iter: int = 200) -> LambdaResult:
    """Picard fixed point of Theta_xi, started from xi itself."""
    v = xi_traj.copy()
    xi_norm = trajectory_norm(xi_traj, grid)
    scale = xi_norm if xi_norm > 0 else 1.0
    for it in range(1, max_iter + 1):
        v_next = apply_theta(v, xi_traj, heat_u, gamma0, grid)
        change = trajectory_norm(v_next - v, grid)
        v = v_next
        if change <= tol * max(trajectory_norm(v, grid), scale):
            bound = trajectory_norm(v, grid) / scale if xi_norm > 0 else 0.0
            return LambdaResult(v, it, change, bound)
    raise RuntimeError(
        f"Picard iteration for Lambda did not converge in {max_iter} iterations "
        f"(last relative change {change:.3e}); the contraction hypothesis is violated"
    )


def heat_kernel(grid: GridSpec, t: float) -> np.ndarray:
    """G_t(x) = (4 pi t)^{-1/2} exp(-x^2/(4t)) on the grid nodes; its L2 norm
    is (8 pi t)^{-1/4} up to domain truncation."""
    if t <= 0:
        raise ValueError("t must be positive")
    return np.exp(-(grid.x**2) / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)
