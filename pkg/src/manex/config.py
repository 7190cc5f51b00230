"""Experiment configuration: one self-describing JSON document.

Sections: env, policy, vib, train, rounds, paths. Every CLI artifact echoes
the resolved configuration for provenance, so a run is reproducible from
(config file, seed) alone.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .envs import EnvConfig, make_env_config
from .errors import ConfigError
from .improve import RoundPlan
from .policy import PolicyConfig
from .trainer import TrainConfig
from .vib import VibConfig

ENV_VAR = "MANEX_CONFIG"


@dataclass
class Paths:
    dataset: str = "demos.jsonl"
    checkpoint: str = "checkpoint.json"
    report_dir: str = "reports"


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=lambda: make_env_config("planar-reach"))
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    vib: VibConfig = field(default_factory=VibConfig)
    vib_enabled: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    rounds: list[RoundPlan] = field(default_factory=list)
    paths: Paths = field(default_factory=Paths)

    def validate(self) -> None:
        self.env.validate()
        self.policy.validate()
        self.vib.validate()
        self.train.validate()
        for plan in self.rounds:
            plan.validate()
        if self.env.horizon < self.policy.horizon:
            raise ConfigError("env.horizon must be >= policy.horizon")

    def to_dict(self) -> dict:
        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return {k: plain(v) for k, v in vars(obj).items()}
            if isinstance(obj, (list, tuple)):
                return [plain(v) for v in obj]
            return obj

        return {
            "env": plain(self.env),
            "policy": plain(self.policy),
            "vib": plain(self.vib),
            "vib_enabled": self.vib_enabled,
            "train": plain(self.train),
            "rounds": [plain(p) for p in self.rounds],
            "paths": plain(self.paths),
        }

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def _build(section: str, cls, data: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{section}: unknown field {key!r}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{section}: {e}") from e


def config_from_dict(doc: dict) -> ExperimentConfig:
    known = {"env", "policy", "vib", "vib_enabled", "train", "rounds", "paths"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"config: unknown section {key!r}")
    env_doc = dict(doc.get("env", {}))
    env_name = env_doc.pop("name", "planar-reach")
    drop = ("start_box", "goal_box", "object_box", "obstacle_center_box")
    for key in drop:  # sampling boxes are task defaults, not user-settable JSON
        env_doc.pop(key, None)
    if "obstacle_radius_range" in env_doc:
        env_doc["obstacle_radius_range"] = tuple(env_doc["obstacle_radius_range"])
    try:
        env = make_env_config(env_name, **env_doc)
    except TypeError as e:
        raise ConfigError(f"env: {e}") from e
    train_doc = dict(doc.get("train", {}))
    if "betas" in train_doc:
        train_doc["betas"] = tuple(train_doc["betas"])
    cfg = ExperimentConfig(
        env=env,
        policy=_build("policy", PolicyConfig, doc.get("policy", {})),
        vib=_build("vib", VibConfig, doc.get("vib", {})),
        vib_enabled=bool(doc.get("vib_enabled", True)),
        train=_build("train", TrainConfig, train_doc),
        rounds=[_build(f"rounds[{i}]", RoundPlan, p) for i, p in enumerate(doc.get("rounds", []))],
        paths=_build("paths", Paths, doc.get("paths", {})),
    )
    cfg.validate()
    return cfg


def load_config(path: str | None = None) -> ExperimentConfig:
    """Load from `path`, the MANEX_CONFIG env var, or defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    return config_from_dict(doc)
