"""Evaluation rollouts, episode records and navigation metrics."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .astg import AstgConfig, AstgNetwork
from .core import build_action_space
from .orca import OrcaParams
from .sim import (COLLISION, REACHED_GOAL, TIMEOUT, EpisodeConfig, EpisodeLog, ScenarioSpec,
                  generate_scenario, orca_robot_policy, run_episode)
from .trainer import value_policy

RECORD_SCHEMA_VERSION = 1


class UndefinedMetricError(ValueError):
    pass


@dataclass
class EpisodeRecord:
    seed: int
    scenario: dict
    steps: list[dict]
    outcome: str
    nav_time: float
    version: int = RECORD_SCHEMA_VERSION

    @property
    def d_mins(self) -> list[float]:
        # steps[0] is the initial snapshot, before any action
        return [math.inf if s["d_min"] is None else s["d_min"] for s in self.steps[1:]]

    def discomfort_steps(self, threshold: float) -> int:
        return sum(d < threshold for d in self.d_mins)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> EpisodeRecord:
        if d.get("version") != RECORD_SCHEMA_VERSION:
            raise ValueError(f"unsupported episode record version {d.get('version')!r}")
        return cls(**d)


def _agent(a) -> dict:
    return {"p": [a.px, a.py], "v": [a.vx, a.vy]}


def record_from_log(log: EpisodeLog, spec: ScenarioSpec) -> EpisodeRecord:
    init = log.initial
    steps = [{"t": 0.0, "robot": _agent(init.robot), "humans": [_agent(h) for h in init.humans],
              "action": None, "reward": None, "d_min": None}]
    for s in log.steps:
        steps.append({
            "t": s.time,
            "robot": _agent(s.robot),
            "humans": [_agent(h) for h in s.humans],
            "action": [s.action.vx, s.action.vy],
            "reward": s.reward,
            "d_min": None if math.isinf(s.d_min) else s.d_min,
        })
    return EpisodeRecord(spec.seed, asdict(spec), steps, log.cause, log.steps[-1].time)


# --- rollouts ---------------------------------------------------------------

@dataclass(frozen=True)
class PolicySpec:
    """Picklable description of a robot policy."""

    kind: str = "astg"
    model: Optional[AstgConfig] = None
    params: Optional[dict] = None
    gamma: float = 0.9

    def build(self, ep_cfg: EpisodeConfig, orca: OrcaParams, v_pref: float, seed: int = 0):
        if self.kind == "orca":
            return orca_robot_policy(orca, ep_cfg)
        if self.kind == "astg":
            net = AstgNetwork(self.model, self.params)
            return value_policy(net, build_action_space(v_pref), self.gamma, ep_cfg)
        if self.kind == "random":
            actions = build_action_space(v_pref)
            rng = np.random.default_rng(seed)
            return lambda world, obs: actions[int(rng.integers(len(actions)))]
        raise ValueError(f"unknown policy kind {self.kind!r}")


def _run_case(args) -> EpisodeRecord:
    policy_spec, spec, ep_cfg, orca = args
    world = generate_scenario(spec)
    policy = policy_spec.build(ep_cfg, orca, spec.robot_v_pref, seed=spec.seed)
    return record_from_log(run_episode(world, policy, ep_cfg, orca), spec)


def run_eval(policy: PolicySpec, family: ScenarioSpec, seeds: Sequence[int], ep_cfg: EpisodeConfig,
             orca: OrcaParams = OrcaParams(), workers: int = 1) -> list[EpisodeRecord]:
    """Greedy rollouts, one per seed; the scenario for a seed does not depend on the policy."""
    if not seeds:
        raise ValueError("need at least one evaluation case")
    jobs = [(policy, replace(family, seed=int(s)), ep_cfg, orca) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_case, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_run_case(j) for j in jobs]


# --- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class MetricsSummary:
    n_cases: int
    success_rate: float
    collision_rate: float
    timeout_rate: float
    disc_freq: float
    t_succ_nav: Optional[float]
    t_weighted_nav: Optional[float]
    n_succ: int
    n_coll: int
    n_timeout: int
    n_disc: int

    def to_dict(self) -> dict:
        return asdict(self)


def weighted_nav_time(records: Sequence[EpisodeRecord], cfg: EpisodeConfig) -> float:
    """Average time over success and collision cases.

    A success costs its navigation time plus half a step per discomfort step;
    a collision costs the full time limit. Timeouts are excluded.
    """
    succ = [r for r in records if r.outcome == REACHED_GOAL]
    n_coll = sum(r.outcome == COLLISION for r in records)
    if not succ and not n_coll:
        raise UndefinedMetricError("weighted navigation time needs a success or collision case")
    total = sum(r.nav_time + r.discomfort_steps(cfg.discomfort_dist) * 0.5 * cfg.dt for r in succ)
    return (total + n_coll * cfg.t_limit) / (len(succ) + n_coll)


def summarize(records: Sequence[EpisodeRecord], cfg: EpisodeConfig) -> MetricsSummary:
    if not records:
        raise ValueError("cannot summarize an empty record list")
    n = len(records)
    succ = [r for r in records if r.outcome == REACHED_GOAL]
    n_coll = sum(r.outcome == COLLISION for r in records)
    n_timeout = sum(r.outcome == TIMEOUT for r in records)
    total_steps = sum(len(r.d_mins) for r in records)
    disc_steps = sum(r.discomfort_steps(cfg.discomfort_dist) for r in records)
    try:
        t_weighted = weighted_nav_time(records, cfg)
    except UndefinedMetricError:
        t_weighted = None
    return MetricsSummary(
        n_cases=n,
        success_rate=len(succ) / n,
        collision_rate=n_coll / n,
        timeout_rate=n_timeout / n,
        disc_freq=disc_steps / total_steps if total_steps else 0.0,
        t_succ_nav=float(np.mean([r.nav_time for r in succ])) if succ else None,
        t_weighted_nav=t_weighted,
        n_succ=len(succ),
        n_coll=n_coll,
        n_timeout=n_timeout,
        n_disc=sum(r.discomfort_steps(cfg.discomfort_dist) for r in succ),
    )


def format_report(summary: MetricsSummary, title: str = "") -> str:
    def fmt(x, unit=""):
        return "n/a" if x is None else f"{x:.4f}{unit}"

    lines = [title] if title else []
    lines += [
        f"cases            {summary.n_cases}",
        f"success rate     {summary.success_rate:.4f}",
        f"collision rate   {summary.collision_rate:.4f}",
        f"timeout rate     {summary.timeout_rate:.4f}",
        f"discomfort freq  {summary.disc_freq:.4f}",
        f"t_succ_nav       {fmt(summary.t_succ_nav, ' s')}",
        f"t_weighted_nav   {fmt(summary.t_weighted_nav, ' s')}",
        f"N_succ / N_coll / N_disc  {summary.n_succ} / {summary.n_coll} / {summary.n_disc}",
    ]
    return "\n".join(lines) + "\n"


# --- files ------------------------------------------------------------------

def write_records(path, records: Iterable[EpisodeRecord]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict()) + "\n")


def read_records(path) -> list[EpisodeRecord]:
    with open(path) as f:
        return [EpisodeRecord.from_dict(json.loads(line)) for line in f if line.strip()]


def write_trajectories(path, records: Iterable[EpisodeRecord]) -> None:
    """Per-step positions and velocities of every agent, one row per agent per step."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "t", "agent", "x", "y", "vx", "vy"])
        for r in records:
            for s in r.steps:
                agents = [("robot", s["robot"])] + [(f"human{i}", h) for i, h in enumerate(s["humans"])]
                for name, a in agents:
                    w.writerow([r.seed, repr(s["t"]), name, *map(repr, a["p"]), *map(repr, a["v"])])
