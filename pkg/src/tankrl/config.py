"""Run configuration: an INI file with [env], [prior], [ppo], [train], [run] sections.

Every key is optional; omitted keys take the defaults of the dataclasses,
which reproduce the reference simulation setup.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .control import PController
from .ppo import PpoConfig
from .tank import EnvConfig, TankParams
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunOptions:
    output_dir: str = "runs"
    label: str = "run"


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    prior: PController = field(default_factory=PController)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunOptions = field(default_factory=RunOptions)


_PRIOR_KEYS = ("kp", "u0")
_ENV_PARAM_KEYS = tuple(f.name for f in dataclasses.fields(TankParams))
_ENV_KEYS = _ENV_PARAM_KEYS + tuple(f.name for f in dataclasses.fields(EnvConfig) if f.name != "params")
_SECTIONS = {
    "env": _ENV_KEYS,
    "prior": _PRIOR_KEYS,
    "ppo": tuple(f.name for f in dataclasses.fields(PpoConfig)),
    "train": tuple(f.name for f in dataclasses.fields(TrainConfig)),
    "run": tuple(f.name for f in dataclasses.fields(RunOptions)),
}
_DEFAULTS = {
    "env": {**dataclasses.asdict(TankParams()),
            **{k: v for k, v in dataclasses.asdict(EnvConfig()).items() if k != "params"}},
    "prior": {k: getattr(PController(), k) for k in _PRIOR_KEYS},
    "ppo": dataclasses.asdict(PpoConfig()),
    "train": dataclasses.asdict(TrainConfig()),
    "run": dataclasses.asdict(RunOptions()),
}


def _convert(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = s.replace(":", "=", 1).split("=", 1)[0].strip().lower()
            out[(section, key)] = i
    return out


def _build(values: dict[str, dict]) -> RunConfig:
    env = values["env"]
    params = TankParams(**{k: env[k] for k in _ENV_PARAM_KEYS})
    env_cfg = EnvConfig(params=params, **{k: env[k] for k in _ENV_KEYS if k not in _ENV_PARAM_KEYS})
    prior = PController(values["prior"]["kp"], values["prior"]["u0"], params.input_min, params.input_max)
    return RunConfig(env_cfg, prior, PpoConfig(**values["ppo"]), TrainConfig(**values["train"]),
                     RunOptions(**values["run"]))


def parse_config(text: str, source: str = "<config>", overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse INI text plus ``section.key -> value`` overrides into a validated RunConfig."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    lines = _line_numbers(text)
    values = {sec: dict(d) for sec, d in _DEFAULTS.items()}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            where = f"{source}:{lines.get((sec, key), '?')}: [{sec}] {key}"
            if key not in _SECTIONS[sec]:
                raise ConfigError(f"{where}: unknown key")
            values[sec][key] = _convert(raw, _DEFAULTS[sec][key], where)
    for dotted, raw in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if sec not in _SECTIONS or key not in _SECTIONS[sec]:
            raise ConfigError(f"override {dotted!r}: unknown setting")
        values[sec][key] = _convert(raw, _DEFAULTS[sec][key], f"override {dotted}")
    try:
        return _build(values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> RunConfig:
    if path is None:
        return parse_config("", "<defaults>", overrides)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p), overrides)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved INI text; parsing it back gives an equal RunConfig."""
    values = {
        "env": {**dataclasses.asdict(cfg.env.params),
                **{k: v for k, v in dataclasses.asdict(cfg.env).items() if k != "params"}},
        "prior": {k: getattr(cfg.prior, k) for k in _PRIOR_KEYS},
        "ppo": dataclasses.asdict(cfg.ppo),
        "train": dataclasses.asdict(cfg.train),
        "run": dataclasses.asdict(cfg.run),
    }
    parts = []
    for sec, keys in _SECTIONS.items():
        parts.append(f"[{sec}]")
        parts += [f"{k} = {_fmt(values[sec][k])}" for k in keys]
        parts.append("")
    return "\n".join(parts)
