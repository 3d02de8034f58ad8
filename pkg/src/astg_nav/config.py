"""Run configuration: defaults, JSON config files and seeded random streams.

Config files are JSON objects with the sections below; any subset may be
given and unknown keys are rejected.

    {
      "seed": 0,
      "policy": "astg",            # astg | orca
      "workers": 1,
      "cases": 1000,               # evaluation episodes
      "out": "runs/default",
      "checkpoint": null,
      "scenario": {...},           # ScenarioSpec fields except seed
      "episode": {...},            # EpisodeConfig
      "orca": {...},               # OrcaParams
      "model": {...},              # AstgConfig
      "train": {...}               # TrainConfig
    }
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .astg import AstgConfig
from .core import InvalidConfigError
from .orca import OrcaParams
from .sim import EpisodeConfig, ScenarioSpec
from .trainer import TrainConfig

POLICIES = ("astg", "orca")

# order fixes which child seed each subsystem receives
STREAMS = ("init", "scenario", "exploration", "replay", "imitation", "eval")


def default_scenario() -> ScenarioSpec:
    # training scene: 5 dynamic humans crossing plus 2 scattered static ones
    return ScenarioSpec(kind="circle_crossing", n_dynamic=5, n_static=2)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    policy: str = "astg"
    workers: int = 1
    cases: int = 1000
    out: str = "runs/default"
    checkpoint: Optional[str] = None
    scenario: ScenarioSpec = field(default_factory=default_scenario)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    orca: OrcaParams = field(default_factory=OrcaParams)
    model: AstgConfig = field(default_factory=AstgConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise InvalidConfigError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        if self.workers < 1:
            raise InvalidConfigError("workers must be at least 1")
        if self.cases < 1:
            raise InvalidConfigError("cases must be at least 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenario"].pop("seed")
        d["model"] = self.model.to_dict()
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def rng(self, stream: str) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed).spawn(len(STREAMS))[STREAMS.index(stream)])

    def eval_seeds(self, n: Optional[int] = None) -> list[int]:
        n = self.cases if n is None else n
        return [int(s) for s in self.rng("eval").integers(0, 2**31 - 1, size=n)]


_SECTIONS = {"scenario": ScenarioSpec, "episode": EpisodeConfig, "orca": OrcaParams,
             "model": AstgConfig, "train": TrainConfig}


def _build_section(name: str, base, values: dict):
    if not isinstance(values, dict):
        raise InvalidConfigError(f"section {name!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(base)} - ({"seed"} if name == "scenario" else set())
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise InvalidConfigError(f"unknown keys in section {name!r}: {unknown}")
    try:
        return dataclasses.replace(base, **values)
    except TypeError as exc:
        raise InvalidConfigError(f"bad value in section {name!r}: {exc}") from exc


def merge(cfg: RunConfig, values: dict[str, Any]) -> RunConfig:
    """New config with ``values`` (nested like the file format) applied over ``cfg``."""
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - top)
    if unknown:
        raise InvalidConfigError(f"unknown config keys: {unknown}")
    updates = {}
    for key, val in values.items():
        if key in _SECTIONS:
            updates[key] = _build_section(key, getattr(cfg, key), val)
        else:
            updates[key] = val
    return dataclasses.replace(cfg, **updates)


def load_config(path: Optional[str], base: Optional[RunConfig] = None) -> RunConfig:
    cfg = base or RunConfig()
    if path is None:
        return cfg
    try:
        values = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(values, dict):
        raise InvalidConfigError("config file must hold a JSON object")
    return merge(cfg, values)
