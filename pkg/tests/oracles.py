"""Independent reference computations used by the tests."""

import math

import numpy as np


def euler_oracle(x1, x2, voltage, duration, dt=1e-3, hole_ratio=0.0019, pump_gain=0.12, g=981.0):
    """Forward Euler on the tank ODE in plain floats, independent of the package."""
    c = hole_ratio * math.sqrt(2.0 * g)
    for _ in range(int(round(duration / dt))):
        q1 = c * math.sqrt(max(x1, 0.0))
        q2 = c * math.sqrt(max(x2, 0.0))
        x1, x2 = max(x1 + dt * (pump_gain * voltage - q1), 0.0), max(x2 + dt * (q1 - q2), 0.0)
    return x1, x2


def brute_force_gae(rewards, values, next_values, gamma, lam):
    """sum_l (gamma*lam)^l delta_{t+l} over one segment, by direct summation."""
    n = len(rewards)
    deltas = [rewards[t] + gamma * next_values[t] - values[t] for t in range(n)]
    return np.array([sum((gamma * lam) ** l * deltas[t + l] for l in range(n - t)) for t in range(n)])


def euler_overflow_oracle(x1, x2, voltage, duration, level_max, split, dt=1e-4,
                          hole_ratio=0.0019, pump_gain=0.12, g=981.0):
    """Euler with overflow routing; also returns the integrated lower-tank outflow."""
    c = hole_ratio * math.sqrt(2.0 * g)
    outflow = 0.0
    for _ in range(int(round(duration / dt))):
        q1 = c * math.sqrt(max(x1, 0.0))
        q2 = c * math.sqrt(max(x2, 0.0))
        outflow += dt * q2
        x1, x2 = max(x1 + dt * (pump_gain * voltage - q1), 0.0), max(x2 + dt * (q1 - q2), 0.0)
        excess = max(x1 - level_max, 0.0)
        x1 -= excess
        x2 = min(x2 + split * excess, level_max)
    return x1, x2, outflow
