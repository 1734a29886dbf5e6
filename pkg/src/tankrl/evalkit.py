"""Monte Carlo evaluation of deterministic controllers on the tank plant."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tank
from .control import PController, ZeroController, compose
from .policy import ActorCritic, InputNormalizer, actor_forward
from .tank import EnvConfig, Observation, TankState

Controller = Callable[[Observation], np.ndarray]


class PolicyController:
    """Deterministic (mean-action) learned controller, optionally on top of a prior."""

    def __init__(self, params: ActorCritic, prior, normalizer: InputNormalizer,
                 input_min: float = 0.0, input_max: float = 10.0, name: str = "policy"):
        self.params = params
        self.prior = prior
        self.normalizer = normalizer
        self.input_min = input_min
        self.input_max = input_max
        self.name = name

    def __call__(self, obs: Observation):
        mean, _ = actor_forward(self.params, self.normalizer(obs))
        return compose(self.prior(obs), mean, self.input_min, self.input_max)


class ConstantController:
    def __init__(self, voltage: float, name: str = "constant"):
        self.voltage = voltage
        self.name = name

    def __call__(self, obs: Observation):
        return np.full(np.shape(obs.y), self.voltage, dtype=float)


class SteadyStateController:
    """Feedforward-only controller applying the equilibrium voltage of the set point."""

    def __init__(self, params: tank.TankParams, name: str = "steady_state"):
        self.p = params
        self.name = name

    def __call__(self, obs: Observation):
        gain = self.p.pump_gain / (self.p.hole_ratio * np.sqrt(2.0 * self.p.gravity))
        u = np.sqrt(np.maximum(obs.y_ref, 0.0)) / gain
        return np.clip(u, self.p.input_min, self.p.input_max)


def controller_name(controller) -> str:
    if isinstance(controller, PController):
        return "prior"
    if isinstance(controller, ZeroController):
        return "zero"
    return getattr(controller, "name", type(controller).__name__)


@dataclass
class EvalReport:
    setpoints: np.ndarray
    returns: np.ndarray
    final_abs_error: np.ndarray
    controller: str = ""
    seed: int | None = None
    traces: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.returns))

    @property
    def std(self) -> float:
        return float(np.std(self.returns))

    def to_csv(self, target) -> None:
        """Write ``setpoint,return,final_abs_error`` rows to a path or text stream."""
        if not hasattr(target, "write"):
            with open(target, "w", newline="") as fh:
                return self.to_csv(fh)
        w = csv.writer(target, lineterminator="\n")
        w.writerow(("setpoint", "return", "final_abs_error"))
        for row in zip(self.setpoints, self.returns, self.final_abs_error):
            w.writerow([repr(float(v)) for v in row])


def evaluate(controller: Controller, env_cfg: EnvConfig, n_setpoints: int,
             rng: np.random.Generator, *, steps: int | None = None,
             gamma: float | None = None, keep_traces: bool = False,
             seed: int | None = None, y_ref=None, initial_state: TankState | None = None) -> EvalReport:
    """Run `n_setpoints` independent episodes from random resets in one batch.

    The return is the undiscounted reward sum unless `gamma` is given.
    `y_ref` / `initial_state` replace the random draws (broadcast to the batch).
    """
    if n_setpoints < 1:
        raise ValueError("n_setpoints must be >= 1")
    steps = env_cfg.steps_per_goal if steps is None else steps
    state, y_ref_drawn = tank.reset(env_cfg, rng, size=n_setpoints)
    if y_ref is None:
        y_ref = y_ref_drawn
    y_ref = np.broadcast_to(np.asarray(y_ref, dtype=float), (n_setpoints,)).copy()
    if initial_state is not None:
        state = TankState(*(np.broadcast_to(np.asarray(v, dtype=float), (n_setpoints,)).copy()
                            for v in initial_state))
    returns = np.zeros(n_setpoints)
    discount = 1.0
    ys, us = [], []
    obs = tank.observe(state, y_ref, env_cfg, rng)
    for _ in range(steps):
        u = np.asarray(controller(obs), dtype=float)
        state = tank.step(state, u, env_cfg)
        obs = tank.observe(state, y_ref, env_cfg, rng)
        returns += discount * tank.reward(obs)
        if gamma is not None:
            discount *= gamma
        if keep_traces:
            ys.append(obs.y)
            us.append(u)
    traces = {"y": np.array(ys), "u": np.array(us)} if keep_traces else {}
    return EvalReport(np.asarray(y_ref), returns, np.abs(y_ref - obs.y),
                      controller_name(controller), seed, traces)


def tracking_trace(controller: Controller, setpoints: Sequence[float], env_cfg: EnvConfig,
                   rng: np.random.Generator, *, steps_per_setpoint: int | None = None,
                   initial_state: TankState | None = None) -> list[tuple]:
    """Run the plant continuously through a set-point sequence.

    Each row is (t, x1, x2, y, y_ref, u, reward): the state when `u` is
    chosen and the reward after applying it. Without `initial_state` the
    levels are drawn like an environment reset.
    """
    if len(setpoints) == 0:
        raise ValueError("set-point sequence is empty")
    steps = env_cfg.steps_per_goal if steps_per_setpoint is None else steps_per_setpoint
    state = initial_state if initial_state is not None else tank.reset(env_cfg, rng)[0]
    dt = env_cfg.params.sample_period
    rows = []
    k = 0
    for ref in setpoints:
        obs = tank.observe(state, float(ref), env_cfg, rng)
        for _ in range(steps):
            u = float(np.asarray(controller(obs)))
            state = tank.step(state, u, env_cfg)
            nxt = tank.observe(state, float(ref), env_cfg, rng)
            rows.append((k * dt, obs.x1, obs.x2, obs.y, float(ref), u, float(tank.reward(nxt))))
            obs = nxt
            k += 1
    return rows


def segment_final_errors(rows: Sequence[tuple], steps_per_setpoint: int) -> list[float]:
    """|y - y_ref| at the end of each set-point segment of a trace."""
    out = []
    for end in range(steps_per_setpoint, len(rows) + 1, steps_per_setpoint):
        # reward of the last row is the error after the final action
        out.append(-rows[end - 1][6])
    return out


@dataclass
class Aggregate:
    mean: float
    std: float
    per_seed: list[tuple]


def aggregate(reports: Sequence[EvalReport]) -> Aggregate:
    """Mean and std of the per-report mean returns (population std)."""
    if not reports:
        raise ValueError("aggregate needs at least one report")
    means = np.array(sorted(r.mean for r in reports))
    return Aggregate(float(means.mean()), float(means.std()),
                     [(r.seed, r.mean, r.std) for r in reports])


def aggregate_curves(curves: Sequence[Sequence[tuple]]) -> list[tuple]:
    """Merge per-seed (env_steps, mean_return) series into (env_steps, mean, std, n) rows."""
    if not curves:
        raise ValueError("aggregate_curves needs at least one curve")
    by_step: dict[int, list[float]] = {}
    for curve in curves:
        for steps, value in curve:
            by_step.setdefault(int(steps), []).append(float(value))
    rows = []
    for steps in sorted(by_step):
        vals = np.array(sorted(by_step[steps]))
        rows.append((steps, float(vals.mean()), float(vals.std()), len(vals)))
    return rows


def write_aggregate_csv(path, agg: Aggregate) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "mean_return", "std_return"))
        for seed, mean, std in agg.per_seed:
            w.writerow([seed, repr(float(mean)), repr(float(std))])
