"""PPO machinery: rollout storage, GAE, clipped surrogate loss and Adam updates."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import torch

from .policy import ActorCritic, backward

log = logging.getLogger(__name__)

DIAG_HEADER = ("update", "steps", "mean_ratio", "clip_frac", "policy_loss",
               "value_loss", "entropy", "approx_kl")


class UpdateAborted(RuntimeError):
    """Raised when the probability ratio goes non-finite during an update."""

    def __init__(self, msg: str, diagnostics: dict):
        super().__init__(f"{msg}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.97
    clip_eps: float = 0.2
    value_coef: float = 1.0
    entropy_coef: float = 0.02
    epochs: int = 16
    minibatch_size: int = 256
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_advantages: bool = True
    reward_scale: float = 0.01  # applied to rewards before GAE; value targets are in scaled units
    max_grad_norm: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be > 0")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class RolloutBuffer:
    """Flat per-step arrays; `boundary[t]` marks the last step of a goal segment.

    `obs` and `next_obs` rows are (x1, x2, y, y_ref). `next_value` holds the
    critic estimate of the successor state, which at a boundary is the
    bootstrap value of the truncated segment.
    """

    obs: np.ndarray
    inputs: np.ndarray
    next_obs: np.ndarray
    next_inputs: np.ndarray
    residual: np.ndarray
    applied: np.ndarray
    reward: np.ndarray
    log_prob: np.ndarray
    value: np.ndarray
    next_value: np.ndarray
    boundary: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.reward)

    @property
    def n_segments(self) -> int:
        return int(self.boundary.sum())

    @classmethod
    def from_steps(cls, steps: list[dict]) -> "RolloutBuffer":
        cols = {k: np.array([s[k] for s in steps], dtype=float) for k in steps[0] if k != "boundary"}
        return cls(boundary=np.array([s["boundary"] for s in steps], dtype=bool), **cols)


def segments(boundary: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of the goal segments."""
    ends = np.flatnonzero(boundary)
    if len(boundary) == 0 or not boundary[-1]:
        raise ValueError("rollout must end on a segment boundary and be non-empty")
    starts = np.concatenate([[0], ends[:-1] + 1])
    return [(int(s), int(e) + 1) for s, e in zip(starts, ends)]


def gae(rewards, values, next_values, boundary, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets.

    The backward recursion restarts at every boundary; the successor value is
    always used in the TD residual because segments are truncations.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    adv = np.zeros_like(rewards)
    for start, stop in segments(np.asarray(boundary, dtype=bool)):
        running = 0.0
        for t in range(stop - 1, start - 1, -1):
            delta = rewards[t] + gamma * next_values[t] - values[t]
            running = delta + gamma * lam * running
            adv[t] = running
    return adv, adv + values


def compute_gae(buffer: RolloutBuffer, cfg: PpoConfig, critic: ActorCritic | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fill `buffer.advantages` and `buffer.returns`.

    With `critic` given, state values are re-evaluated; otherwise the values
    stored at collection time are used.
    """
    values, next_values = buffer.value, buffer.next_value
    if critic is not None:
        with torch.no_grad():
            values = critic.value(torch.from_numpy(buffer.inputs)).numpy()
            next_values = critic.value(torch.from_numpy(buffer.next_inputs)).numpy()
    buffer.advantages, buffer.returns = gae(cfg.reward_scale * buffer.reward, values, next_values, buffer.boundary,
                                            cfg.gamma, cfg.gae_lambda)
    return buffer.advantages, buffer.returns


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    centered = adv - adv.mean()
    std = centered.std()
    if len(adv) < 2 or std == 0.0:
        return centered
    return centered / std


def ppo_loss(params: ActorCritic, batch: dict, cfg: PpoConfig) -> tuple[torch.Tensor, dict]:
    """Clipped surrogate + value regression - entropy bonus.

    `batch` holds tensors ``inputs``, ``residual``, ``old_log_prob``,
    ``advantages`` and ``returns``.
    """
    log_prob, entropy = params.log_prob(batch["inputs"], batch["residual"])
    log_ratio = log_prob - batch["old_log_prob"]
    ratio = torch.exp(log_ratio)
    if not torch.isfinite(ratio).all():
        bad = (~torch.isfinite(ratio)).nonzero().reshape(-1)[:5].tolist()
        raise UpdateAborted("non-finite probability ratio", {
            "indices": bad, "log_ratio": log_ratio.detach()[bad].tolist()})
    adv = batch["advantages"]
    surr = torch.min(ratio * adv, torch.clamp(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv)
    policy_loss = -surr.mean()
    value_loss = ((params.value(batch["inputs"]) - batch["returns"]) ** 2).mean()
    ent = entropy.mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * ent
    with torch.no_grad():
        stats = {
            "mean_ratio": ratio.mean().item(),
            "clip_frac": ((ratio - 1).abs() > cfg.clip_eps).double().mean().item(),
            "policy_loss": policy_loss.item(),
            "value_loss": value_loss.item(),
            "entropy": ent.item(),
            "approx_kl": ((ratio - 1) - log_ratio).mean().item(),
        }
    return loss, stats


def make_optimizer(params: ActorCritic, cfg: PpoConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params.parameters(), lr=cfg.learning_rate,
                            betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)


def adam_step(params: ActorCritic, optimizer: torch.optim.Adam, cfg: PpoConfig | None = None) -> bool:
    """Apply one Adam step from the gradients stored on `params`.

    Returns False (and leaves everything untouched) if any gradient is
    non-finite.
    """
    grads = [p.grad for p in params.parameters() if p.grad is not None]
    if not all(torch.isfinite(g).all() for g in grads):
        log.warning("non-finite gradient, skipping Adam step")
        return False
    if cfg is not None and cfg.max_grad_norm > 0:
        torch.nn.utils.clip_grad_norm_(params.parameters(), cfg.max_grad_norm)
    optimizer.step()
    return True


def _batch(buffer: RolloutBuffer, idx: np.ndarray, adv: np.ndarray) -> dict:
    return {
        "inputs": torch.from_numpy(buffer.inputs[idx]),
        "residual": torch.from_numpy(buffer.residual[idx]),
        "old_log_prob": torch.from_numpy(buffer.log_prob[idx]),
        "advantages": torch.from_numpy(adv[idx]),
        "returns": torch.from_numpy(buffer.returns[idx]),
    }


def update_policy(params: ActorCritic, buffer: RolloutBuffer, cfg: PpoConfig,
                  rng: np.random.Generator, optimizer: torch.optim.Adam | None = None) -> dict:
    """K epochs of shuffled minibatch updates; returns averaged diagnostics."""
    if optimizer is None:
        optimizer = make_optimizer(params, cfg)
    compute_gae(buffer, cfg)
    adv = normalize_advantages(buffer.advantages) if cfg.normalize_advantages else buffer.advantages
    n = len(buffer)
    totals: dict[str, float] = {}
    count = 0
    skipped = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            loss, stats = ppo_loss(params, _batch(buffer, idx, adv), cfg)
            backward(params, loss)
            if not adam_step(params, optimizer, cfg):
                skipped += 1
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    out = {k: v / count for k, v in totals.items()}
    out["skipped_steps"] = skipped
    return out


def write_diag_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAG_HEADER)
        for r in rows:
            w.writerow([r["update"], r["steps"]] + [repr(float(r[k])) for k in DIAG_HEADER[2:]])
