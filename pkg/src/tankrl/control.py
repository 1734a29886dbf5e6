"""Prior feedback controller and residual composition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tank import ContractViolation, Observation


@dataclass(frozen=True)
class PController:
    """Saturated proportional controller u = kp * (y_ref - y) + u0.

    The sign is chosen so that pumping increases when the level is below the
    set point.
    """

    kp: float = 2.0
    u0: float = 5.0
    input_min: float = 0.0
    input_max: float = 10.0

    def __post_init__(self):
        if not self.input_min < self.input_max:
            raise ContractViolation("input_min must be < input_max")

    def __call__(self, obs: Observation):
        return prior_action(self, obs)


@dataclass(frozen=True)
class ZeroController:
    """Stand-in prior for plain PPO: always proposes 0 V before saturation."""

    input_min: float = 0.0
    input_max: float = 10.0

    def __call__(self, obs: Observation):
        return np.clip(np.zeros_like(np.asarray(obs.y, dtype=float)), self.input_min, self.input_max)


def prior_action(ctl: PController, obs: Observation):
    raw = ctl.kp * np.subtract(obs.y_ref, obs.y) + ctl.u0
    return np.clip(raw, ctl.input_min, ctl.input_max)


def compose(prior, residual, input_min: float, input_max: float):
    """Plant input from prior and residual, saturated to the actuator range."""
    return np.clip(np.add(prior, residual), input_min, input_max)
