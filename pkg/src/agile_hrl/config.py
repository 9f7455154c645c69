"""Experiment configuration: JSON file plus ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import envs
from .exceptions import ConfigError, SpecError

ALGORITHMS = ("AGILE", "HIRO_LIKE", "FLAT_TD3")


@dataclass
class Config:
    # task
    env: str = "u_maze"
    maze: dict = field(default_factory=dict)
    algorithm: str = "AGILE"
    # hierarchy / adversarial
    k: int = 10
    alpha_adv: float = 1e-3
    disc_lr: float = 2e-4
    disc_hidden: list = field(default_factory=lambda: [64, 16])
    nonsaturating: bool = False
    disc_state_conditioned: bool = False
    n_relabel_samples: int = 8
    relabel_std_frac: float = 0.5
    high_update_every: int = 1
    # TD3, both levels
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_high: int = 64
    batch_low: int = 128
    buffer_capacity: int = 200_000
    hidden_sizes: list = field(default_factory=lambda: [300, 300])
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    smoothing_std: float = 0.2
    smoothing_clip: float = 0.5
    high_smoothing: bool = True
    expl_noise_low: float = 0.1
    expl_noise_high: float = 0.1
    high_reward_scale: float = 0.1
    low_reward_scale: float = 1.0
    # schedule
    warmup_steps: int = 2_500
    total_steps: int = 100_000
    eval_every: int = 5_000
    eval_episodes: int = 10
    seed: int = 0
    # output
    out_dir: str = "runs/run"
    log_wall_clock: bool = False
    save_checkpoints: bool = True

    @property
    def hierarchical(self) -> bool:
        return self.algorithm != "FLAT_TD3"

    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.algorithm == "HIRO_LIKE" else self.alpha_adv

    def maze_spec(self) -> envs.MazeSpec:
        try:
            return envs.make_maze(self.env, **self.maze)
        except (SpecError, TypeError) as exc:
            raise ConfigError("maze" if self.maze else "env", str(exc)) from None

    def validate(self) -> "Config":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {ALGORITHMS}")
        for key in ("actor_lr", "critic_lr", "disc_lr", "tau", "high_reward_scale", "low_reward_scale"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be > 0")
        for key in ("k", "batch_high", "batch_low", "buffer_capacity", "policy_delay", "eval_every",
                    "eval_episodes", "high_update_every"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        if not self.alpha_adv >= 0:
            raise ConfigError("alpha_adv", "must be >= 0")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma", "must lie in [0, 1)")
        if self.tau > 1:
            raise ConfigError("tau", "must be <= 1")
        for key in ("batch_high", "batch_low"):
            if getattr(self, key) > self.buffer_capacity:
                raise ConfigError(key, "batch size exceeds buffer capacity")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps", "must be >= 0")
        if self.total_steps < self.warmup_steps:
            raise ConfigError("total_steps", "must be >= warmup_steps")
        for key in ("smoothing_std", "smoothing_clip", "expl_noise_low", "expl_noise_high",
                    "relabel_std_frac", "n_relabel_samples"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "must be >= 0")
        for key in ("hidden_sizes", "disc_hidden"):
            sizes = getattr(self, key)
            if not sizes or any(int(s) < 1 for s in sizes):
                raise ConfigError(key, "must be a non-empty list of positive widths")
        self.maze_spec()
        return self

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}
_DEFAULTS = Config()


def _coerce(key, value):
    """Check/convert ``value`` to the type of the ``key`` default."""
    default = getattr(_DEFAULTS, key)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(key, f"expected a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, int):
            return value
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(key, f"expected a number, got {value!r}")
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ConfigError(key, f"expected a string, got {value!r}")
    if isinstance(default, list):
        if isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return value
        raise ConfigError(key, f"expected a list of integers, got {value!r}")
    if isinstance(default, dict):
        if isinstance(value, dict):
            return value
        raise ConfigError(key, f"expected an object, got {value!r}")
    raise ConfigError(key, "unsupported field type")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def config_from_dict(data: dict, overrides=()) -> Config:
    values = {}
    maze = {}
    for key, value in data.items():
        if key not in _FIELDS:
            raise ConfigError(key, "unknown configuration key")
        values[key] = _coerce(key, value)
    maze.update(values.pop("maze", {}))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, text = item.split("=", 1)
        key = key.strip()
        value = _parse_value(text.strip())
        if key.startswith("maze."):
            maze[key[5:]] = value
            continue
        if key not in _FIELDS:
            raise ConfigError(key, "unknown configuration key")
        if key == "maze":
            maze.update(_coerce(key, value))
        else:
            values[key] = _coerce(key, value)
    return Config(**values, maze=maze).validate()


def parse_config(path, overrides=()) -> Config:
    """Load a JSON config (``None`` means all defaults) and apply overrides last."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("config", f"file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"malformed JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a JSON object")
    return config_from_dict(data, overrides)
