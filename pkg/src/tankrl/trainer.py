"""Residual multi-goal training loop.

Each iteration draws M set points, runs the composed controller (prior plus
sampled residual) for T steps on each, and hands the batch to PPO. In
``plain_ppo`` mode the prior is replaced by a zero controller, so the two
modes share every other code path.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import ppo
from .control import PController, ZeroController, compose
from .evalkit import PolicyController, evaluate
from .policy import (ActorCritic, InputNormalizer, actor_forward, critic_forward,
                     sample_and_logprob, save_checkpoint)
from .tank import EnvConfig, TankEnv

log = logging.getLogger(__name__)

MODES = ("residual_ppo", "plain_ppo")
CURVE_HEADER = ("env_steps", "mean_return", "std_return", "mode", "seed")

_STREAMS = {"init": 0, "env": 1, "policy": 2, "shuffle": 3, "eval": 4, "noise": 5}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent named random stream derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[name]]))


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "residual_ppo"
    goals_per_update: int = 5
    steps_per_goal: int = 200
    total_env_steps: int = 30000
    seed: int = 1
    eval_every: int = 1000
    eval_setpoints: int = 100
    checkpoint_every: int = 5000
    reset_each_goal: bool = True
    hidden_units: int = 128
    hidden_layers: int = 3
    init_std: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.goals_per_update < 1:
            raise ValueError("goals_per_update must be >= 1")
        if self.steps_per_goal < 2:
            raise ValueError("steps_per_goal must be >= 2")
        if self.total_env_steps < self.steps_per_update:
            raise ValueError("total_env_steps must cover at least one update (M*T)")
        if self.hidden_units < 1 or self.hidden_layers < 1:
            raise ValueError("hidden_units and hidden_layers must be >= 1")
        if self.eval_every < 0 or self.checkpoint_every < 0:
            raise ValueError("eval_every and checkpoint_every must be >= 0")

    @property
    def steps_per_update(self) -> int:
        return self.goals_per_update * self.steps_per_goal


def make_prior(mode: str, prior: PController):
    if mode == "plain_ppo":
        return ZeroController(prior.input_min, prior.input_max)
    return prior


def init_params(cfg: TrainConfig) -> ActorCritic:
    return ActorCritic(3, cfg.hidden_units, cfg.hidden_layers, cfg.init_std, rng=stream(cfg.seed, "init"))


def collect_rollout(env: TankEnv, params: ActorCritic, prior, normalizer: InputNormalizer,
                    goals: int, steps: int, rng: np.random.Generator, *,
                    reset_each_goal: bool = True, deterministic: bool = False) -> ppo.RolloutBuffer:
    """Run `goals` segments of `steps` transitions with the composed controller.

    The log-probability is that of the unclamped residual sample; only the
    plant input is saturated.
    """
    p = env.cfg.params
    rows = []
    for m in range(goals):
        if reset_each_goal or m == 0:
            obs = env.reset()
        else:
            obs = env.set_goal(float(env.rng.uniform(env.cfg.goal_min, env.cfg.goal_max)))
        for t in range(steps):
            inp = normalizer(obs)
            if deterministic:
                mean, log_std = actor_forward(params, inp)
                residual = float(mean)
                log_prob = float(-log_std - 0.5 * np.log(2 * np.pi))
            else:
                residual, log_prob = (float(v) for v in sample_and_logprob(params, inp, rng))
            u = float(compose(prior(obs), residual, p.input_min, p.input_max))
            next_obs, r = env.step(u)
            rows.append({
                "obs": tuple(obs), "inputs": inp, "next_obs": tuple(next_obs),
                "next_inputs": normalizer(next_obs), "residual": residual, "applied": u,
                "reward": float(r), "log_prob": log_prob, "value": 0.0, "next_value": 0.0,
                "boundary": t == steps - 1,
            })
            obs = next_obs
    buf = ppo.RolloutBuffer.from_steps(rows)
    buf.value = critic_forward(params, buf.inputs)
    buf.next_value = critic_forward(params, buf.next_inputs)
    return buf


@dataclass
class TrainResult:
    params: ActorCritic
    curve: list[tuple] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    env_steps: int = 0
    updates: int = 0
    baseline: float | None = None


def write_curve_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for steps, mean, std, mode, seed in rows:
            w.writerow([steps, repr(float(mean)), repr(float(std)), mode, seed])


def train(env_cfg: EnvConfig, prior: PController, ppo_cfg: ppo.PpoConfig, cfg: TrainConfig, *,
          params: ActorCritic | None = None, out_dir: Path | None = None,
          eval_baseline: bool = False, eval_env_cfg: EnvConfig | None = None) -> TrainResult:
    """Alternate rollouts and PPO updates until the step budget is spent.

    The deterministic policy is evaluated before the first update and then
    every `cfg.eval_every` env steps, always on the same set points (the
    eval stream is re-derived from the seed). With `out_dir`, curve.csv,
    diag.csv and checkpoints/ are (re)written as training progresses.
    """
    torch.manual_seed(cfg.seed)
    params = params if params is not None else init_params(cfg)
    eval_env_cfg = eval_env_cfg or env_cfg
    normalizer = InputNormalizer(env_cfg.goal_min, env_cfg.goal_max)
    prior_ctl = make_prior(cfg.mode, prior)
    env = TankEnv(env_cfg, stream(cfg.seed, "env"), stream(cfg.seed, "noise"))
    policy_rng = stream(cfg.seed, "policy")
    shuffle_rng = stream(cfg.seed, "shuffle")
    optimizer = ppo.make_optimizer(params, ppo_cfg)
    result = TrainResult(params)

    ckpt_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def run_eval():
        ctl = PolicyController(params, prior_ctl, normalizer, prior.input_min, prior.input_max, cfg.mode)
        rep = evaluate(ctl, eval_env_cfg, cfg.eval_setpoints, stream(cfg.seed, "eval"), seed=cfg.seed)
        result.curve.append((result.env_steps, rep.mean, rep.std, cfg.mode, cfg.seed))
        log.info("seed %d %s steps %d mean return %.3f", cfg.seed, cfg.mode, result.env_steps, rep.mean)

    def checkpoint():
        if ckpt_dir is None:
            return
        path = ckpt_dir / f"step_{result.env_steps:08d}.ckpt"
        save_checkpoint(path, params, seed=cfg.seed, updates=result.updates, mode=cfg.mode)
        result.checkpoints.append(path)

    def flush():
        if out_dir is not None:
            write_curve_csv(out_dir / "curve.csv", result.curve)
            ppo.write_diag_csv(out_dir / "diag.csv", result.diagnostics)

    if eval_baseline:
        rep = evaluate(prior, eval_env_cfg, cfg.eval_setpoints, stream(cfg.seed, "eval"), seed=cfg.seed)
        result.baseline = rep.mean
    if cfg.eval_every:
        run_eval()
    checkpoint()
    flush()

    n_updates = cfg.total_env_steps // cfg.steps_per_update
    for _ in range(n_updates):
        buf = collect_rollout(env, params, prior_ctl, normalizer, cfg.goals_per_update,
                              cfg.steps_per_goal, policy_rng, reset_each_goal=cfg.reset_each_goal)
        stats = ppo.update_policy(params, buf, ppo_cfg, shuffle_rng, optimizer)
        result.env_steps += len(buf)
        result.updates += 1
        result.diagnostics.append({"update": result.updates, "steps": result.env_steps, **stats})
        if cfg.eval_every and result.env_steps % cfg.eval_every < cfg.steps_per_update:
            run_eval()
        if cfg.checkpoint_every and result.env_steps % cfg.checkpoint_every < cfg.steps_per_update:
            checkpoint()
        flush()
    if ckpt_dir is not None and (not result.checkpoints or
                                 result.checkpoints[-1].name != f"step_{result.env_steps:08d}.ckpt"):
        checkpoint()
    return result
