"""Cascaded two-tank plant.

Torricelli outflow through a hole at the bottom of each tank, a pump feeding
the upper tank, and the lower tank level as the measured output. The
continuous dynamics are integrated with fixed-step RK4 while the pump voltage
is held constant over a sampling period.

All state-level functions accept Python floats or numpy arrays of equal
shape, so a batch of plants can be advanced in one call.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class ContractViolation(ValueError):
    """Raised when an argument breaks a documented precondition."""


@dataclass(frozen=True)
class TankParams:
    hole_ratio: float = 0.0019  # a/A, dimensionless
    pump_gain: float = 0.12  # K_pump/A, cm/(V s)
    gravity: float = 981.0  # cm/s^2
    input_min: float = 0.0  # V
    input_max: float = 10.0  # V
    level_max: float = 12.0  # cm, only used in overflow mode
    sample_period: float = 2.0  # s
    substeps: int = 10

    def __post_init__(self):
        if not self.hole_ratio > 0:
            raise ContractViolation(f"hole_ratio must be > 0, got {self.hole_ratio}")
        if not self.pump_gain > 0:
            raise ContractViolation(f"pump_gain must be > 0, got {self.pump_gain}")
        if not self.gravity > 0:
            raise ContractViolation(f"gravity must be > 0, got {self.gravity}")
        if not self.input_min < self.input_max:
            raise ContractViolation("input_min must be < input_max")
        if not self.sample_period > 0:
            raise ContractViolation("sample_period must be > 0")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ContractViolation("substeps must be a positive integer")
        if not self.level_max > 0:
            raise ContractViolation("level_max must be > 0")

    def steady_state(self, voltage):
        """Equilibrium level (both tanks) under a constant voltage."""
        return (self.pump_gain * voltage / (self.hole_ratio * math.sqrt(2.0 * self.gravity))) ** 2


@dataclass(frozen=True)
class EnvConfig:
    params: TankParams = field(default_factory=TankParams)
    overflow_mode: bool = False
    overflow_split: float = 0.5
    measurement_noise_std: float = 0.0
    goal_min: float = 0.0
    goal_max: float = 10.0
    steps_per_goal: int = 200

    def __post_init__(self):
        if not 0.0 <= self.overflow_split <= 1.0:
            raise ContractViolation("overflow_split must lie in [0, 1]")
        if not self.measurement_noise_std >= 0.0:
            raise ContractViolation("measurement_noise_std must be >= 0")
        if not self.goal_min <= self.goal_max:
            raise ContractViolation("goal_min must not exceed goal_max")
        if self.steps_per_goal < 1:
            raise ContractViolation("steps_per_goal must be >= 1")


class TankState(NamedTuple):
    x1: float  # upper tank level, cm
    x2: float  # lower tank level, cm


class Observation(NamedTuple):
    x1: float
    x2: float
    y: float
    y_ref: float


class StepFlows(NamedTuple):
    """Water volumes (as level change, cm) moved during one sampling period."""

    inflow: float
    outflow: float
    spilled: float


def _check_finite(*values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ContractViolation(f"non-finite input: {v!r}")


def _check_state(state: TankState) -> None:
    _check_finite(state.x1, state.x2)
    if np.any(np.asarray(state.x1) < 0) or np.any(np.asarray(state.x2) < 0):
        raise ContractViolation(f"negative tank level: {state!r}")


def derivative(state: TankState, voltage, params: TankParams):
    """Time derivative of both tank levels in cm/s.

    Square-root arguments are clamped at zero so an empty tank has zero outflow.
    """
    _check_finite(state.x1, state.x2, voltage)
    two_g = 2.0 * params.gravity
    q1 = params.hole_ratio * np.sqrt(two_g * np.maximum(state.x1, 0.0))
    q2 = params.hole_ratio * np.sqrt(two_g * np.maximum(state.x2, 0.0))
    return -q1 + params.pump_gain * voltage, q1 - q2


def _rates(x1, x2, voltage, p: TankParams, overflow_split: float | None):
    """Level rates plus the lower-tank outflow and spill rates.

    With `overflow_split` set, a full tank's net inflow leaves as spill; the
    given fraction of the upper tank's spill enters the lower tank.
    """
    two_g = 2.0 * p.gravity
    q1 = p.hole_ratio * np.sqrt(two_g * np.maximum(x1, 0.0))
    q2 = p.hole_ratio * np.sqrt(two_g * np.maximum(x2, 0.0))
    d1 = p.pump_gain * voltage - q1
    d2 = q1 - q2
    if overflow_split is None:
        return d1, d2, q2, 0.0
    spill1 = np.where((x1 >= p.level_max) & (d1 > 0), d1, 0.0)
    d1 = d1 - spill1
    d2 = d2 + overflow_split * spill1
    spill2 = np.where((x2 >= p.level_max) & (d2 > 0), d2, 0.0)
    return d1, d2 - spill2, q2, (1.0 - overflow_split) * spill1 + spill2


def step_flows(state: TankState, voltage, cfg: EnvConfig) -> tuple[TankState, StepFlows]:
    """Advance one sampling period and report the water moved.

    Lower-tank outflow and spilled water are integrated alongside the levels
    with the same RK4 stages, so the water balance holds to rounding error.
    Levels are clamped to [0, level_max] after every sub-step.
    """
    _check_state(state)
    _check_finite(voltage)
    p = cfg.params
    v = np.asarray(voltage, dtype=float)
    if np.any(v < p.input_min - 1e-12) or np.any(v > p.input_max + 1e-12):
        raise ContractViolation(f"voltage {voltage!r} outside [{p.input_min}, {p.input_max}]")

    split = cfg.overflow_split if cfg.overflow_mode else None
    h = p.sample_period / p.substeps
    x1 = np.asarray(state.x1, dtype=float)
    x2 = np.asarray(state.x2, dtype=float)
    out = np.zeros_like(x1 + x2)
    spilled = np.zeros_like(out)
    for _ in range(int(p.substeps)):
        a = _rates(x1, x2, v, p, split)
        b = _rates(x1 + 0.5 * h * a[0], x2 + 0.5 * h * a[1], v, p, split)
        c = _rates(x1 + 0.5 * h * b[0], x2 + 0.5 * h * b[1], v, p, split)
        d = _rates(x1 + h * c[0], x2 + h * c[1], v, p, split)
        x1, x2, dout, dspill = (
            prev + h / 6.0 * (ka + 2.0 * kb + 2.0 * kc + kd)
            for prev, ka, kb, kc, kd in zip((x1, x2, 0.0, 0.0), a, b, c, d))
        out = out + dout
        spilled = spilled + dspill
        x1 = np.maximum(x1, 0.0)
        x2 = np.maximum(x2, 0.0)
        if split is not None:
            excess1 = np.maximum(x1 - p.level_max, 0.0)
            x1 = x1 - excess1
            x2 = x2 + split * excess1
            excess2 = np.maximum(x2 - p.level_max, 0.0)
            x2 = x2 - excess2
            spilled = spilled + (1.0 - split) * excess1 + excess2

    inflow = p.pump_gain * v * p.sample_period
    if x1.ndim == 0:
        return (TankState(float(x1), float(x2)),
                StepFlows(float(inflow), float(out), float(spilled)))
    return TankState(x1, x2), StepFlows(inflow, out, spilled)


def step(state: TankState, voltage, cfg: EnvConfig) -> TankState:
    """Advance the plant one sampling period under a held voltage."""
    return step_flows(state, voltage, cfg)[0]


def observe(state: TankState, y_ref, cfg: EnvConfig, rng: np.random.Generator | None = None) -> Observation:
    """Expose the full state plus the (optionally noisy) lower-tank level."""
    _check_state(state)
    y = state.x2
    if cfg.measurement_noise_std > 0:
        if rng is None:
            raise ContractViolation("measurement noise enabled but no rng given")
        y = y + cfg.measurement_noise_std * rng.standard_normal(np.shape(state.x2))
        if np.ndim(y) == 0:
            y = float(y)
    return Observation(state.x1, state.x2, y, y_ref)


def reward(obs: Observation):
    """Negative absolute tracking error."""
    return -np.abs(np.subtract(obs.y_ref, obs.y))


def reset(cfg: EnvConfig, rng: np.random.Generator, size: int | None = None) -> tuple[TankState, float]:
    """Draw initial levels and a set point uniformly from the goal range."""
    lo, hi = cfg.goal_min, cfg.goal_max
    x1 = rng.uniform(lo, hi, size)
    x2 = rng.uniform(lo, hi, size)
    y_ref = rng.uniform(lo, hi, size)
    if size is None:
        return TankState(float(x1), float(x2)), float(y_ref)
    return TankState(x1, x2), y_ref


class TankEnv:
    """Goal-conditioned wrapper holding the current plant state and set point."""

    def __init__(self, cfg: EnvConfig, rng: np.random.Generator,
                 noise_rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = rng
        self.noise_rng = noise_rng if noise_rng is not None else rng
        self.state = TankState(0.0, 0.0)
        self.y_ref = 0.0

    def reset(self) -> Observation:
        self.state, self.y_ref = reset(self.cfg, self.rng)
        return self.observe()

    def set_goal(self, y_ref: float) -> Observation:
        self.y_ref = y_ref
        return self.observe()

    def observe(self) -> Observation:
        return observe(self.state, self.y_ref, self.cfg, self.noise_rng)

    def step(self, voltage: float) -> tuple[Observation, float]:
        self.state = step(self.state, voltage, self.cfg)
        obs = self.observe()
        return obs, reward(obs)


TRACE_HEADER = ("t", "x1", "x2", "y", "y_ref", "u", "reward")


def write_trace_csv(target, rows: Sequence[Sequence[float]]) -> None:
    """Write trace rows to a path or text stream (shortest round-trip floats)."""
    if hasattr(target, "write"):
        _write_trace(target, rows)
    else:
        with open(target, "w", newline="") as fh:
            _write_trace(fh, rows)


def _write_trace(fh, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
