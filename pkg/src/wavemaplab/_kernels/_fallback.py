"""Pure-numpy implementations of the per-step pointwise kernels.

Operation order is kept identical to the compiled backend (same sequence of
adds, multiplies, square roots per grid point) so the two backends produce
bitwise-equal trajectories and either can serve as the oracle for the other.
"""

from __future__ import annotations

import numpy as np

__all__ = ["wave_step", "wave_step_strat"]


def wave_step(u, v, lap, du, dw, dt, eps, gamma0, out_u, out_v):
    """One Ito-Euler update of the sphere-valued wave map at every grid point.

    u, v, lap, du: (N, 3); dw: (N,).  Writes the renormalized position into
    out_u and the tangent-projected velocity into out_v.
    """
    inv_eps = 1.0 / eps
    noise_amp = 1.0 / np.sqrt(eps)

    u0, u1, u2 = u[:, 0], u[:, 1], u[:, 2]
    v0, v1, v2 = v[:, 0], v[:, 1], v[:, 2]

    gg = du[:, 0] * du[:, 0] + du[:, 1] * du[:, 1] + du[:, 2] * du[:, 2]
    vv = v0 * v0 + v1 * v1 + v2 * v2
    coef = gg - eps * vv

    a0 = inv_eps * (lap[:, 0] + coef * u0 - gamma0 * v0)
    a1 = inv_eps * (lap[:, 1] + coef * u1 - gamma0 * v1)
    a2 = inv_eps * (lap[:, 2] + coef * u2 - gamma0 * v2)

    ndw = noise_amp * dw
    c0 = u1 * v2 - u2 * v1
    c1 = u2 * v0 - u0 * v2
    c2 = u0 * v1 - u1 * v0

    vs0 = v0 + dt * a0 + c0 * ndw
    vs1 = v1 + dt * a1 + c1 * ndw
    vs2 = v2 + dt * a2 + c2 * ndw

    w0 = u0 + dt * vs0
    w1 = u1 + dt * vs1
    w2 = u2 + dt * vs2
    inv_n = 1.0 / np.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
    un0 = w0 * inv_n
    un1 = w1 * inv_n
    un2 = w2 * inv_n

    dot = un0 * vs0 + un1 * vs1 + un2 * vs2
    out_u[:, 0] = un0
    out_u[:, 1] = un1
    out_u[:, 2] = un2
    out_v[:, 0] = vs0 - dot * un0
    out_v[:, 1] = vs1 - dot * un1
    out_v[:, 2] = vs2 - dot * un2


def wave_step_strat(u, v, lap, du, dw, dt, eps, gamma, out_u, out_v):
    """Heun variant: predictor velocity, then the noise coefficient re-evaluated
    at the midpoint velocity (u is noise-free, so only v enters the midpoint).
    Drift uses the bare friction gamma; the midpoint rule supplies the
    Ito correction implicitly.
    """
    inv_eps = 1.0 / eps
    noise_amp = 1.0 / np.sqrt(eps)

    u0, u1, u2 = u[:, 0], u[:, 1], u[:, 2]
    v0, v1, v2 = v[:, 0], v[:, 1], v[:, 2]

    gg = du[:, 0] * du[:, 0] + du[:, 1] * du[:, 1] + du[:, 2] * du[:, 2]
    vv = v0 * v0 + v1 * v1 + v2 * v2
    coef = gg - eps * vv

    a0 = inv_eps * (lap[:, 0] + coef * u0 - gamma * v0)
    a1 = inv_eps * (lap[:, 1] + coef * u1 - gamma * v1)
    a2 = inv_eps * (lap[:, 2] + coef * u2 - gamma * v2)

    ndw = noise_amp * dw
    c0 = u1 * v2 - u2 * v1
    c1 = u2 * v0 - u0 * v2
    c2 = u0 * v1 - u1 * v0

    # predictor
    p0 = v0 + dt * a0 + c0 * ndw
    p1 = v1 + dt * a1 + c1 * ndw
    p2 = v2 + dt * a2 + c2 * ndw

    # midpoint velocity for the noise coefficient only
    m0 = 0.5 * (v0 + p0)
    m1 = 0.5 * (v1 + p1)
    m2 = 0.5 * (v2 + p2)
    cm0 = u1 * m2 - u2 * m1
    cm1 = u2 * m0 - u0 * m2
    cm2 = u0 * m1 - u1 * m0

    vs0 = v0 + dt * a0 + cm0 * ndw
    vs1 = v1 + dt * a1 + cm1 * ndw
    vs2 = v2 + dt * a2 + cm2 * ndw

    w0 = u0 + dt * vs0
    w1 = u1 + dt * vs1
    w2 = u2 + dt * vs2
    inv_n = 1.0 / np.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
    un0 = w0 * inv_n
    un1 = w1 * inv_n
    un2 = w2 * inv_n

    dot = un0 * vs0 + un1 * vs1 + un2 * vs2
    out_u[:, 0] = un0
    out_u[:, 1] = un1
    out_u[:, 2] = un2
    out_v[:, 0] = vs0 - dot * un0
    out_v[:, 1] = vs1 - dot * un1
    out_v[:, 2] = vs2 - dot * un2
