"""Numerical laboratory for the damped stochastic wave map into the sphere,
its harmonic-map heat-flow limit, and the Gaussian fluctuation processes
around that limit."""

__version__ = "0.1.0"

from ._kernels import backend_name as kernel_backend

__all__ = ["kernel_backend", "__version__"]
