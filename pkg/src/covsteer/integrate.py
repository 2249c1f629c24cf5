"""Fixed-step classical Runge-Kutta integration and Simpson quadrature.

All integrators work on arbitrary ndarray-valued states (vectors, matrices,
stacked matrices) so the same machinery drives transition matrices, Riccati
flows and Lyapunov covariance propagation.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import DomainError

Rhs = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(f: Rhs, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """Single classical RK4 step from t to t+dt (dt may be negative)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_span(f: Rhs, y0: np.ndarray, t0: float, t1: float, n_steps: int) -> np.ndarray:
    """Integrate y' = f(t, y) from t0 to t1 with n_steps uniform RK4 steps."""
    if n_steps < 1:
        raise DomainError("n_steps must be positive")
    dt = (t1 - t0) / n_steps
    y = np.asarray(y0, dtype=float)
    for k in range(n_steps):
        y = rk4_step(f, t0 + k * dt, y, dt)
    return y


def steps_for_span(steps_per_unit: int, a: float, b: float) -> int:
    """Step count for [a, b] at a density of steps_per_unit on a unit interval."""
    return max(1, math.ceil(steps_per_unit * abs(b - a) - 1e-12))


def rk4_checkpoints(
    f: Rhs,
    y0: np.ndarray,
    t0: float,
    checkpoints: list[float] | np.ndarray,
    steps_per_unit: int = 1000,
) -> list[np.ndarray]:
    """Integrate from t0, recording the state at each checkpoint.

    Checkpoints must be sorted and >= t0; each inter-checkpoint segment is
    integrated with a uniform RK4 grid proportional to its length.
    """
    cps = [float(c) for c in checkpoints]
    if any(b < a for a, b in zip(cps, cps[1:])):
        raise DomainError("checkpoints must be sorted ascending")
    if cps and cps[0] < t0 - 1e-12:
        raise DomainError("checkpoints must not precede the start time")
    out = []
    y = np.asarray(y0, dtype=float)
    t = t0
    for c in cps:
        if c > t + 1e-14:
            y = rk4_span(f, y, t, c, steps_for_span(steps_per_unit, t, c))
            t = c
        out.append(y.copy())
    return out


def rk4_grid(f: Rhs, y0: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Integrate along a uniform grid, returning the state at every node.

    Result has shape (len(grid),) + y0.shape with result[0] == y0.
    """
    y = np.asarray(y0, dtype=float)
    out = np.empty((len(grid),) + y.shape)
    out[0] = y
    for k in range(len(grid) - 1):
        y = rk4_step(f, grid[k], y, grid[k + 1] - grid[k])
        out[k + 1] = y
    return out


def simpson_uniform(samples: np.ndarray, h: float) -> np.ndarray:
    """Composite Simpson rule over uniformly spaced samples (even interval count)."""
    n = len(samples) - 1
    if n < 2 or n % 2 != 0:
        raise DomainError("Simpson quadrature needs an even, positive interval count")
    acc = samples[0] + samples[-1]
    acc = acc + 4.0 * np.sum(samples[1:-1:2], axis=0)
    acc = acc + 2.0 * np.sum(samples[2:-1:2], axis=0)
    return (h / 3.0) * acc
