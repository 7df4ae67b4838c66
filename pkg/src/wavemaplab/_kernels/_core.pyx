# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-step kernels for the sphere-valued wave map update.

Mirrors _fallback.py operation for operation; see that module for the
derivation of the staging.  Keep the two in sync.
"""

from libc.math cimport sqrt

import numpy as np


def wave_step(double[:, ::1] u, double[:, ::1] v,
              double[:, ::1] lap, double[:, ::1] du,
              double[::1] dw, double dt, double eps, double gamma0,
              double[:, ::1] out_u, double[:, ::1] out_v):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t j
    cdef double inv_eps = 1.0 / eps
    cdef double noise_amp = 1.0 / sqrt(eps)
    cdef double u0, u1, u2, v0, v1, v2
    cdef double gg, vv, coef, a0, a1, a2, ndw
    cdef double c0, c1, c2, vs0, vs1, vs2
    cdef double w0, w1, w2, inv_n, un0, un1, un2, dot

    for j in range(n):
        u0 = u[j, 0]; u1 = u[j, 1]; u2 = u[j, 2]
        v0 = v[j, 0]; v1 = v[j, 1]; v2 = v[j, 2]

        gg = du[j, 0] * du[j, 0] + du[j, 1] * du[j, 1] + du[j, 2] * du[j, 2]
        vv = v0 * v0 + v1 * v1 + v2 * v2
        coef = gg - eps * vv

        a0 = inv_eps * (lap[j, 0] + coef * u0 - gamma0 * v0)
        a1 = inv_eps * (lap[j, 1] + coef * u1 - gamma0 * v1)
        a2 = inv_eps * (lap[j, 2] + coef * u2 - gamma0 * v2)

        ndw = noise_amp * dw[j]
        c0 = u1 * v2 - u2 * v1
        c1 = u2 * v0 - u0 * v2
        c2 = u0 * v1 - u1 * v0

        vs0 = v0 + dt * a0 + c0 * ndw
        vs1 = v1 + dt * a1 + c1 * ndw
        vs2 = v2 + dt * a2 + c2 * ndw

        w0 = u0 + dt * vs0
        w1 = u1 + dt * vs1
        w2 = u2 + dt * vs2
        inv_n = 1.0 / sqrt(w0 * w0 + w1 * w1 + w2 * w2)
        un0 = w0 * inv_n
        un1 = w1 * inv_n
        un2 = w2 * inv_n

        dot = un0 * vs0 + un1 * vs1 + un2 * vs2
        out_u[j, 0] = un0
        out_u[j, 1] = un1
        out_u[j, 2] = un2
        out_v[j, 0] = vs0 - dot * un0
        out_v[j, 1] = vs1 - dot * un1
        out_v[j, 2] = vs2 - dot * un2


def wave_step_strat(double[:, ::1] u, double[:, ::1] v,
                    double[:, ::1] lap, double[:, ::1] du,
                    double[::1] dw, double dt, double eps, double gamma,
                    double[:, ::1] out_u, double[:, ::1] out_v):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t j
    cdef double inv_eps = 1.0 / eps
    cdef double noise_amp = 1.0 / sqrt(eps)
    cdef double u0, u1, u2, v0, v1, v2
    cdef double gg, vv, coef, a0, a1, a2, ndw
    cdef double c0, c1, c2, p0, p1, p2, m0, m1, m2
    cdef double cm0, cm1, cm2, vs0, vs1, vs2
    cdef double w0, w1, w2, inv_n, un0, un1, un2, dot

    for j in range(n):
        u0 = u[j, 0]; u1 = u[j, 1]; u2 = u[j, 2]
        v0 = v[j, 0]; v1 = v[j, 1]; v2 = v[j, 2]

        gg = du[j, 0] * du[j, 0] + du[j, 1] * du[j, 1] + du[j, 2] * du[j, 2]
        vv = v0 * v0 + v1 * v1 + v2 * v2
        coef = gg - eps * vv

        a0 = inv_eps * (lap[j, 0] + coef * u0 - gamma * v0)
        a1 = inv_eps * (lap[j, 1] + coef * u1 - gamma * v1)
        a2 = inv_eps * (lap[j, 2] + coef * u2 - gamma * v2)

        ndw = noise_amp * dw[j]
        c0 = u1 * v2 - u2 * v1
        c1 = u2 * v0 - u0 * v2
        c2 = u0 * v1 - u1 * v0

        p0 = v0 + dt * a0 + c0 * ndw
        p1 = v1 + dt * a1 + c1 * ndw
        p2 = v2 + dt * a2 + c2 * ndw

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
        inv_n = 1.0 / sqrt(w0 * w0 + w1 * w1 + w2 * w2)
        un0 = w0 * inv_n
        un1 = w1 * inv_n
        un2 = w2 * inv_n

        dot = un0 * vs0 + un1 * vs1 + un2 * vs2
        out_u[j, 0] = un0
        out_u[j, 1] = un1
        out_u[j, 2] = un2
        out_v[j, 0] = vs0 - dot * un0
        out_v[j, 1] = vs1 - dot * un1
        out_v[j, 2] = vs2 - dot * un2
