"""Strong-stability-preserving two-stage Runge-Kutta step, shared by the
1D and 2D finite-volume solvers."""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["ssp_rk2_step"]


def ssp_rk2_step(
    state: np.ndarray, dt: float, rhs: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    """Heun step written as a convex combination of two Euler stages:

        w1     = w + dt * L(w)
        w_next = w/2 + (w1 + dt * L(w1)) / 2
    """
    stage = state + dt * rhs(state)
    return 0.5 * state + 0.5 * (stage + dt * rhs(stage))
