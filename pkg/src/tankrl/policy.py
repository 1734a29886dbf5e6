"""Goal-conditioned Gaussian actor and value critic.

Both networks see the normalized vector (x1, x2, y_ref). The actor has a
mean head and a state-dependent log-std head on a shared trunk; the critic
has its own trunk. Everything runs in float64 so finite-difference checks on
the analytic gradients are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .tank import ContractViolation, Observation

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

CHECKPOINT_MAGIC = "tankrl-checkpoint v1"


class CheckpointError(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class InputNormalizer:
    """Affine map of [goal_min, goal_max] onto [-1, 1]; no clipping."""

    goal_min: float = 0.0
    goal_max: float = 10.0

    def __post_init__(self):
        if not self.goal_max > self.goal_min:
            raise ContractViolation(
                f"degenerate normalization range [{self.goal_min}, {self.goal_max}]")

    def scale(self, v):
        return 2.0 * (np.asarray(v, dtype=float) - self.goal_min) / (self.goal_max - self.goal_min) - 1.0

    def unscale(self, z):
        return (np.asarray(z, dtype=float) + 1.0) * 0.5 * (self.goal_max - self.goal_min) + self.goal_min

    def __call__(self, obs: Observation) -> np.ndarray:
        """Normalized (x1, x2, y_ref) with shape (3,) or (n, 3) for batched obs."""
        return np.stack([self.scale(obs.x1), self.scale(obs.x2), self.scale(obs.y_ref)], axis=-1)


def normalize(obs: Observation, normalizer: InputNormalizer) -> np.ndarray:
    return normalizer(obs)


def _mlp(in_dim: int, hidden: int, layers: int) -> nn.Sequential:
    mods = []
    for i in range(layers):
        mods += [nn.Linear(in_dim if i == 0 else hidden, hidden), nn.Tanh()]
    return nn.Sequential(*mods)


class ActorCritic(nn.Module):
    def __init__(self, obs_dim: int = 3, hidden: int = 128, layers: int = 3,
                 init_std: float = 0.5, rng: np.random.Generator | None = None):
        super().__init__()
        self.obs_dim = obs_dim
        self.hidden = hidden
        self.layers = layers
        self.actor_trunk = _mlp(obs_dim, hidden, layers)
        self.mean_head = nn.Linear(hidden, 1)
        self.log_std_head = nn.Linear(hidden, 1)
        self.critic_trunk = _mlp(obs_dim, hidden, layers)
        self.value_head = nn.Linear(hidden, 1)
        self.double()
        self.reset_parameters(rng if rng is not None else np.random.default_rng(0), init_std)

    @torch.no_grad()
    def reset_parameters(self, rng: np.random.Generator, init_std: float = 0.5) -> None:
        # uniform +-1/sqrt(fan_in), drawn from numpy so the run seed fixes it
        for lin in [m for m in self.modules() if isinstance(m, nn.Linear)]:
            bound = 1.0 / math.sqrt(lin.in_features)
            lin.weight.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(lin.weight.shape))))
            lin.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(lin.bias.shape))))
        self.mean_head.weight.zero_()
        self.mean_head.bias.zero_()
        self.log_std_head.weight.zero_()
        self.log_std_head.bias.fill_(math.log(init_std))

    def actor(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.actor_trunk(x)
        mean = self.mean_head(h).squeeze(-1)
        log_std = self.log_std_head(h).squeeze(-1).clamp(LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def value(self, x: torch.Tensor) -> torch.Tensor:
        return self.value_head(self.critic_trunk(x)).squeeze(-1)

    def log_prob(self, x: torch.Tensor, action: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Log-density of `action` and the entropy, both per sample."""
        mean, log_std = self.actor(x)
        return gaussian_log_prob(action, mean, log_std), gaussian_entropy(log_std)

    def flat_parameters(self) -> np.ndarray:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()]).numpy().copy()

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        flat = torch.from_numpy(np.array(flat, dtype=np.float64))
        i = 0
        with torch.no_grad():
            for p in self.parameters():
                n = p.numel()
                p.copy_(flat[i:i + n].view_as(p))
                i += n


def gaussian_log_prob(x, mean, log_std):
    z = (x - mean) * torch.exp(-log_std)
    return -0.5 * z * z - log_std - HALF_LOG_2PI


def gaussian_entropy(log_std):
    return 0.5 + HALF_LOG_2PI + log_std


def _as_tensor(inp) -> torch.Tensor:
    return torch.as_tensor(np.asarray(inp, dtype=np.float64))


@torch.no_grad()
def actor_forward(params: ActorCritic, inp) -> tuple[np.ndarray, np.ndarray]:
    """Mean residual and log-std for one input (3,) or a batch (n, 3)."""
    mean, log_std = params.actor(_as_tensor(inp))
    return mean.numpy(), log_std.numpy()


@torch.no_grad()
def critic_forward(params: ActorCritic, inp) -> np.ndarray:
    return params.value(_as_tensor(inp)).numpy()


@torch.no_grad()
def sample_and_logprob(params: ActorCritic, inp, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    mean, log_std = params.actor(_as_tensor(inp))
    z = torch.from_numpy(np.asarray(rng.standard_normal(tuple(mean.shape)), dtype=np.float64))
    action = mean + torch.exp(log_std) * z
    return action.numpy(), gaussian_log_prob(action, mean, log_std).numpy()


def backward(params: ActorCritic, loss: torch.Tensor) -> np.ndarray:
    """Populate .grad on every parameter and return the flattened gradient."""
    if not torch.isfinite(loss).all():
        raise NonFiniteLoss(f"loss is not finite: {loss.item()!r}")
    params.zero_grad(set_to_none=False)
    loss.backward()
    return torch.cat([(torch.zeros_like(p) if p.grad is None else p.grad).reshape(-1)
                      for p in params.parameters()]).numpy().copy()


def parameter_checksum(params: ActorCritic) -> str:
    import hashlib
    return hashlib.sha256(params.flat_parameters().tobytes()).hexdigest()


def save_checkpoint(path, params: ActorCritic, *, seed: int, updates: int, mode: str = "") -> None:
    """Write an ASCII header followed by raw little-endian float64 values.

    Header lines: magic, ``seed N``, ``updates N``, ``mode NAME``,
    ``arch obs_dim hidden layers``, ``tensors N``, then one
    ``name dim0 [dim1]`` line per tensor, then ``end``. Values follow in
    tensor order, each tensor row-major.
    """
    named = list(params.named_parameters())
    lines = [CHECKPOINT_MAGIC, f"seed {seed}", f"updates {updates}", f"mode {mode or '-'}",
             f"arch {params.obs_dim} {params.hidden} {params.layers}", f"tensors {len(named)}"]
    lines += [" ".join([name, *map(str, p.shape)]) for name, p in named]
    lines.append("end")
    data = np.concatenate([p.detach().numpy().reshape(-1) for _, p in named]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(data.tobytes())


@dataclass
class Checkpoint:
    params: ActorCritic
    seed: int
    updates: int
    mode: str


def load_checkpoint(path, expect: ActorCritic | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    header_end = raw.find(b"\nend\n")
    if not raw.startswith(CHECKPOINT_MAGIC.encode()) or header_end < 0:
        raise CheckpointError(f"{path}: not a tankrl checkpoint")
    lines = raw[:header_end].decode("ascii").split("\n")
    meta = dict(line.split(" ", 1) for line in lines[1:6])
    obs_dim, hidden, layers = map(int, meta["arch"].split())
    params = ActorCritic(obs_dim, hidden, layers)
    shapes = [(ln.split()[0], tuple(int(d) for d in ln.split()[1:])) for ln in lines[6:]]
    expected = [(n, tuple(p.shape)) for n, p in params.named_parameters()]
    if shapes != expected:
        raise CheckpointError(f"{path}: tensor layout {shapes} does not match architecture {expected}")
    if expect is not None:
        want = [(n, tuple(p.shape)) for n, p in expect.named_parameters()]
        if want != expected:
            raise CheckpointError(
                f"{path}: architecture (obs_dim={obs_dim}, hidden={hidden}, layers={layers}) "
                f"does not match the configured network (obs_dim={expect.obs_dim}, "
                f"hidden={expect.hidden}, layers={expect.layers})")
    data = np.frombuffer(raw[header_end + 5:], dtype="<f8")
    n = sum(p.numel() for p in params.parameters())
    if data.size != n:
        raise CheckpointError(f"{path}: expected {n} values, found {data.size}")
    params.set_flat_parameters(data)
    mode = meta["mode"]
    return Checkpoint(params, int(meta["seed"]), int(meta["updates"]), "" if mode == "-" else mode)
