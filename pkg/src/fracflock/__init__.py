"""Nonlocal flocking toolkit.

Agent-based Cucker-Smale simulation with a singular alignment kernel,
a conservative finite-volume solver for the matching nonlocal Euler
system in one and two dimensions, and Gaussian-process Bayesian
optimization that recovers the kernel's fractional order from particle
trajectories.
"""

from fracflock.kernel import KernelSpec, influence, normalization_constant

__version__ = "0.1.0"

__all__ = ["KernelSpec", "influence", "normalization_constant", "__version__"]
