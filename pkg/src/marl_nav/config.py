"""Run configuration: built-in defaults, then a JSON file, then command-line flags."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .ppo import PpoConfig
from .uavenv import EnvConfig, RewardConfig
from .worldmap import LidarConfig

SCALES = ("paper", "desk")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CurriculumConfig:
    scale: str = "paper"
    free_iterations: int = 150
    obstacle_iterations: int = 310
    direct_iterations: int = 460  # single obstacle stage when curriculum is off
    checkpoint_every: int = 25

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ConfigError(f"unknown scale {self.scale!r}; expected one of {SCALES}")
        for name in ("free_iterations", "obstacle_iterations", "direct_iterations", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"curriculum.{name} must be >= 1")


@dataclass(frozen=True)
class MapsConfig:
    free: str = "stage1_free"
    obstacles: str = "stage2_obstacles"


@dataclass(frozen=True)
class RunConfig:
    variant: str = "model3"
    seed: int = 0
    workers: int = 1
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    maps: MapsConfig = field(default_factory=MapsConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ppo"]["hidden"] = list(d["ppo"]["hidden"])
        return d


# Desk scale: 15 m maps, smaller batches and iteration counts that keep
# the 150:310 stage ratio roughly and equal env-steps across variants.
DESK_OVERRIDES = {
    "ppo": {"train_batch_size": 4096, "minibatch_size": 512},
    "curriculum": {"scale": "desk", "free_iterations": 40, "obstacle_iterations": 80, "direct_iterations": 120},
    "maps": {"free": "desk_free", "obstacles": "desk_obstacles"},
}


def deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be an object")
            out[k] = deep_merge(out[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_dict(scale: str = "paper") -> dict:
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; expected one of {SCALES}")
    d = RunConfig().to_dict()
    return deep_merge(d, DESK_OVERRIDES) if scale == "desk" else d


def from_dict(d: dict) -> RunConfig:
    try:
        env = dict(d["env"])
        env["lidar"] = LidarConfig(**env["lidar"])
        return RunConfig(
            variant=d["variant"],
            seed=int(d["seed"]),
            workers=int(d["workers"]),
            env=EnvConfig(**env),
            reward=RewardConfig(**d["reward"]),
            ppo=PpoConfig(**d["ppo"]),
            curriculum=CurriculumConfig(**d["curriculum"]),
            maps=MapsConfig(**d["maps"]),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def read_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def resolve(file_doc: dict | None = None, flags: dict | None = None) -> RunConfig:
    """Layer defaults, file and flags; the scale picks which defaults apply."""
    file_doc = file_doc or {}
    flags = flags or {}
    scale = flags.get("curriculum", {}).get("scale") or file_doc.get("curriculum", {}).get("scale") or "paper"
    merged = deep_merge(default_dict(scale), file_doc)
    merged = deep_merge(merged, flags)
    return from_dict(merged)


def write_resolved(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
