"""Initial-data families shared by tests and experiments.

All data is constant (north pole) outside a compact region, the concrete
representation of finite-energy maps on the truncated line.  The geodesic
ansatz u = (sin theta, 0, cos theta) keeps |u_x| = |theta_x| pointwise, so
scalar bump profiles translate directly into energy levels.
"""

from __future__ import annotations

import numpy as np

from .grid import GridSpec

__all__ = [
    "geodesic_bump",
    "geodesic_state",
    "tangent_frame",
    "tangent_bump",
    "beta_family",
    "NORTH",
]

NORTH = np.array([0.0, 0.0, 1.0])


def geodesic_bump(grid: GridSpec, amplitude: float = 1.5, width: float = 1.0) -> np.ndarray:
    """Sphere-valued bump along a great circle: theta(x) = A exp(-(x/w)^2)."""
    theta = amplitude * np.exp(-((grid.x / width) ** 2))
    u = np.empty((grid.n_points, 3))
    u[:, 0] = np.sin(theta)
    u[:, 1] = 0.0
    u[:, 2] = np.cos(theta)
    return u


def geodesic_state(grid: GridSpec, amplitude: float = 1.5, width: float = 1.0):
    """(u0, v0) with zero velocity."""
    return geodesic_bump(grid, amplitude, width), np.zeros((grid.n_points, 3))


def tangent_frame(u: np.ndarray) -> np.ndarray:
    """For geodesic data in the x-z plane the in-circle tangent direction is
    e'(theta) = (cos theta, 0, -sin theta) = (u3, 0, -u1)."""
    e = np.empty_like(u)
    e[:, 0] = u[:, 2]
    e[:, 1] = 0.0
    e[:, 2] = -u[:, 0]
    return e


def tangent_bump(grid: GridSpec, u: np.ndarray, amplitude: float = 0.5, width: float = 1.0) -> np.ndarray:
    """Compactly supported tangent field amplitude*exp(-(x/w)^2) e'(theta)."""
    profile = amplitude * np.exp(-((grid.x / width) ** 2))
    return profile[:, None] * tangent_frame(u)


def beta_family(grid: GridSpec, beta: float, amplitude: float = 1.5, v_amplitude: float = 0.5):
    """eps -> (u0, v0_eps) with |(u0_eps - u0, sqrt(eps) v0_eps)| = O(eps^beta):
    the position is eps-independent and v0_eps = eps^{beta - 1/2} w for a fixed
    tangent bump w (w = 0 gives exactly prepared velocity)."""
    u0 = geodesic_bump(grid, amplitude)
    w = tangent_bump(grid, u0, v_amplitude) if v_amplitude != 0.0 else np.zeros_like(u0)

    def family(eps: float):
        return u0, (eps ** (beta - 0.5)) * w

    return family
