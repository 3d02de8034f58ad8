"""Command-line entry point: ``astg-nav {train,eval,rollout}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .astg import AstgNetwork, load_network, save_network
from .autodiff import CheckpointError
from .config import RunConfig, load_config, merge
from .core import InvalidConfigError, build_action_space
from .evaluate import (PolicySpec, format_report, record_from_log, run_eval, summarize,
                       write_records, write_trajectories)
from .sim import ScenarioError, generate_scenario, run_episode
from .trainer import CurveEntry, ReplayBuffer, TrainingDivergedError, il_pretrain, rl_train

log = logging.getLogger("astg_nav")

SCENARIO_PRESETS = {
    "circle": {"kind": "circle_crossing", "n_static": 0},
    "scattered": {"kind": "scattered_static", "n_dynamic": 5, "n_static": 2},
    "group": {"kind": "group_static", "n_dynamic": 5, "n_static": 5},
}


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps())
    return out


def _scenario_sampler(cfg: RunConfig):
    rng = cfg.rng("scenario")

    def new_world():
        return generate_scenario(replace(cfg.scenario, seed=int(rng.integers(2**31 - 1))))
    return new_world


def cmd_train(cfg: RunConfig) -> Path:
    """Imitation bootstrap then TD training; writes checkpoints and the training curve."""
    out = _prepare_out(cfg)
    net = AstgNetwork(cfg.model, seed=int(cfg.rng("init").integers(2**31 - 1)))
    new_world = _scenario_sampler(cfg)
    curve_file = open(out / "curve.jsonl", "w")

    def on_curve(entry: CurveEntry):
        curve_file.write(json.dumps(entry.to_dict()) + "\n")

    def on_checkpoint(episode: int, model: AstgNetwork):
        save_network(out / f"checkpoint_rl{episode:06d}.json", model, {"episode": episode})

    try:
        replay = ReplayBuffer(cfg.train.replay_capacity)
        if cfg.train.il_episodes > 0:
            demos = il_pretrain(net, cfg.train, cfg.episode, new_world, cfg.rng("imitation"),
                                cfg.orca, on_curve)
            replay.extend(demos)
            save_network(out / "checkpoint_il.json", net, {"phase": "il"})
        if cfg.train.rl_episodes > 0:
            rl_train(net, cfg.train, cfg.episode, build_action_space(cfg.scenario.robot_v_pref),
                     new_world, cfg.rng("exploration"), cfg.rng("replay"), cfg.orca, replay,
                     on_curve, on_checkpoint)
    finally:
        curve_file.close()
    save_network(out / "checkpoint.json", net, {"phase": "final"})
    return out / "checkpoint.json"


def _policy_spec(cfg: RunConfig) -> PolicySpec:
    if cfg.policy == "orca":
        return PolicySpec("orca")
    if cfg.checkpoint is None:
        raise InvalidConfigError("the astg policy needs --checkpoint")
    net = load_network(cfg.checkpoint, cfg.model)
    return PolicySpec("astg", cfg.model, net.arrays(), cfg.train.gamma)


def cmd_eval(cfg: RunConfig):
    policy = _policy_spec(cfg)
    out = _prepare_out(cfg)
    records = run_eval(policy, cfg.scenario, cfg.eval_seeds(), cfg.episode, cfg.orca, cfg.workers)
    summary = summarize(records, cfg.episode)
    s = cfg.scenario
    title = (f"policy={cfg.policy} mode={cfg.model.mode} scenario={s.kind} dynamic={s.n_dynamic} "
             f"static={s.n_static} layout={s.layout} seed={cfg.seed}")
    report = format_report(summary, title)
    (out / "report.txt").write_text(report)
    (out / "metrics.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    write_records(out / "episodes.jsonl", records)
    write_trajectories(out / "trajectories.csv", records)
    return summary, report


def cmd_rollout(cfg: RunConfig):
    policy_spec = _policy_spec(cfg)
    out = _prepare_out(cfg)
    spec = replace(cfg.scenario, seed=cfg.seed)
    policy = policy_spec.build(cfg.episode, cfg.orca, spec.robot_v_pref, seed=cfg.seed)
    record = record_from_log(run_episode(generate_scenario(spec), policy, cfg.episode, cfg.orca), spec)
    write_records(out / f"rollout_{cfg.seed}.jsonl", [record])
    write_trajectories(out / f"rollout_{cfg.seed}.csv", [record])
    return record


def _overrides(args: argparse.Namespace) -> dict:
    values: dict = {}
    scenario: dict = {}
    if args.scenario:
        scenario.update(SCENARIO_PRESETS[args.scenario])
    for flag, key in (("dynamic", "n_dynamic"), ("static", "n_static"), ("layout", "layout")):
        if getattr(args, flag) is not None:
            scenario[key] = getattr(args, flag)
    if scenario:
        values["scenario"] = scenario
    for flag in ("seed", "cases", "checkpoint", "out", "workers", "policy"):
        if getattr(args, flag) is not None:
            values[flag] = getattr(args, flag)
    if args.ablation:
        values["model"] = {"mode": args.ablation}
    train = {}
    if getattr(args, "il_episodes", None) is not None:
        train["il_episodes"] = args.il_episodes
    if getattr(args, "rl_episodes", None) is not None:
        train["rl_episodes"] = args.rl_episodes
    if train:
        values["train"] = train
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    return merge(load_config(args.config), _overrides(args))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="astg-nav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("train", "imitation + TD training"),
                            ("eval", "evaluate a policy over many seeded cases"),
                            ("rollout", "run and export a single episode")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--scenario", choices=sorted(SCENARIO_PRESETS))
        p.add_argument("--dynamic", type=int)
        p.add_argument("--static", type=int)
        p.add_argument("--layout", choices=["DS", "RO", "CO"])
        p.add_argument("--cases", type=int)
        p.add_argument("--ablation", choices=["full", "spatial_only", "temporal_only"])
        p.add_argument("--checkpoint")
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        p.add_argument("--policy", choices=["astg", "orca"])
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            p.add_argument("--il-episodes", type=int)
            p.add_argument("--rl-episodes", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        sys.stdout.write(cfg.dumps())
        if args.command == "train":
            path = cmd_train(cfg)
            print(f"checkpoint written to {path}")
        elif args.command == "eval":
            _, report = cmd_eval(cfg)
            sys.stdout.write(report)
        else:
            record = cmd_rollout(cfg)
            print(f"outcome {record.outcome} after {record.nav_time:.2f} s")
    except (InvalidConfigError, CheckpointError, ScenarioError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
