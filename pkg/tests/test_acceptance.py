"""Acceptance criteria. Each test prints one PASS/FAIL line, also echoed in the summary."""
import itertools
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from astg_nav import autodiff as ad
from astg_nav.astg import AstgConfig, AstgNetwork
from astg_nav.cli import cmd_eval, cmd_train
from astg_nav.config import load_config
from astg_nav.core import WorldAgentState
from astg_nav.evaluate import PolicySpec, run_eval, summarize, weighted_nav_time
from astg_nav.orca import OrcaParams, orca_velocity
from astg_nav.sim import EpisodeConfig, ScenarioSpec, generate_scenario, replay_humans, run_episode, step
from astg_nav.trainer import TrainConfig, discount_factor, il_pretrain
from conftest import ACCEPTANCE_LINES, min_separation_linear, random_batch, sampled_safe_set, synthetic_record

# verified: 96 % held-out success against 0 % for the random policy
PIPELINE_SEED = 0
EP = EpisodeConfig()


def verdict(n, title, ok, detail):
    line = f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# --- independent numpy forward pass, used as the finite-difference oracle -------

def _np_mlp(x, p, name, n_layers, last_relu):
    for i in range(n_layers):
        x = x @ p[f"{name}.w{i}"] + p[f"{name}.b{i}"]
        if i < n_layers - 1 or last_relu:
            x = np.maximum(x, 0.0)
    return x


def _np_gat(x, w, a, slope):
    wx = x @ w
    d = wx.shape[1]
    logits = (wx @ a[:d])[:, None, 0] + (wx @ a[d:])[None, :, 0]
    logits = np.where(logits > 0, logits, slope * logits)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    alpha = e / e.sum(axis=1, keepdims=True)
    return np.maximum(alpha @ wx, 0.0)


def reference_value(p, cfg, robot, humans, history):
    """V for one state (robot (5,), humans (n, 7), history (n, K, 7)) in plain numpy."""
    parts = []
    if cfg.use_spatial:
        x = np.concatenate([np.repeat(robot[None], len(humans), 0), humans], axis=1)
        e = _np_mlp(x, p, "spatial_mlp", len(cfg.spatial_hidden), True)
        parts.append(e + _np_gat(e, p["spatial_gat.w"], p["spatial_gat.a"], cfg.leaky_slope))
    if cfg.use_temporal:
        h = np.zeros((len(humans), cfg.rnn_hidden))
        for t in range(history.shape[1]):
            g = _np_mlp(history[:, t], p, "temporal_mlp", 1, True)
            h = np.tanh(g @ p["rnn.w_in"] + h @ p["rnn.w_rec"] + p["rnn.bias"])
        parts.append(h + _np_gat(h, p["temporal_gat.w"], p["temporal_gat.a"], cfg.leaky_slope))
    st = np.concatenate(parts, axis=1)
    z = np.concatenate([st, np.repeat(st.mean(axis=0, keepdims=True), len(st), 0)], axis=1)
    scores = _np_mlp(z, p, "attention_mlp", len(cfg.attention_hidden) + 1, False)[:, 0]
    w = np.exp(scores - scores.max())
    crowd = (w / w.sum()) @ st
    return _np_mlp(np.concatenate([robot, crowd]), p, "value_mlp", len(cfg.value_hidden) + 1, False)[0]


def test_criterion_01_gradient_integrity():
    t0 = time.time()
    cfg = AstgConfig()
    net = AstgNetwork(cfg, seed=21)
    robot, humans, history = random_batch(np.random.default_rng(21), 3, 4)
    v, _ = net.forward(robot, humans, history)
    ad.backward(ad.sum_all(v))
    p = net.arrays()
    args = (robot[0], humans[0], history[0])
    assert abs(reference_value(p, cfg, *args) - v.item()) < 1e-12
    eps, worst, worst_name, count = 1e-5, 0.0, "", 0
    for name, arr in p.items():
        grad = net.params[name].grad
        flat = arr.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = reference_value(p, cfg, *args)
            flat[i] = keep - eps
            down = reference_value(p, cfg, *args)
            flat[i] = keep
            num = (up - down) / (2 * eps)
            g = grad.reshape(-1)[i]
            # gradients below 1e-6 are compared absolutely, since roundoff in the
            # central difference is about 1e-11
            rel = abs(g - num) / max(abs(g), abs(num), 1e-6)
            if rel > worst:
                worst, worst_name = rel, f"{name}[{i}]"
            count += 1
    elapsed = time.time() - t0
    verdict(1, "gradient integrity", worst < 1e-4 and elapsed < 60,
            f"{count} parameters, max rel err {worst:.2e} at {worst_name}, {elapsed:.1f} s")


def test_criterion_02_permutation_invariance():
    rng = np.random.default_rng(2)
    net = AstgNetwork(AstgConfig(), seed=2)
    worst = 0.0
    for _ in range(100):
        n, k = int(rng.integers(2, 11)), int(rng.integers(1, 9))
        robot, humans, history = random_batch(rng, n, k)
        perm = rng.permutation(n)
        v0 = net.forward(robot, humans, history, track=False)[0].item()
        v1 = net.forward(robot, humans[:, perm], history[:, perm], track=False)[0].item()
        worst = max(worst, abs(v0 - v1))
    verdict(2, "permutation invariance", worst < 1e-9, f"100 states, max |dV| {worst:.2e}")


def test_criterion_03_attention_stochasticity():
    rng = np.random.default_rng(3)
    worst_sum, lo, hi = 0.0, 1.0, 0.0
    net = None
    for i in range(1000):
        if i % 100 == 0:
            net = AstgNetwork(AstgConfig(), seed=i)
        n, k = int(rng.integers(1, 11)), int(rng.integers(1, 9))
        robot, humans, history = random_batch(rng, n, k)
        scale = rng.choice([0.1, 1.0, 10.0])
        feats = net.forward(robot * scale, humans * scale, history * scale, track=False)[1]
        for m in (feats.alpha_spatial[0], feats.alpha_temporal[0], feats.social_weights):
            worst_sum = max(worst_sum, float(np.max(np.abs(m.sum(axis=-1) - 1.0))))
            lo, hi = min(lo, float(m.min())), max(hi, float(m.max()))
    verdict(3, "attention stochasticity", worst_sum < 1e-9 and lo >= 0.0 and hi <= 1.0,
            f"1000 passes, max |row sum - 1| {worst_sum:.2e}, entries in [{lo:.3g}, {hi:.3g}]")


def test_criterion_04_residual_correctness():
    rng = np.random.default_rng(4)
    net = AstgNetwork(AstgConfig(), seed=4)
    net.params["spatial_gat.w"].data[...] = 0.0
    net.params["temporal_gat.w"].data[...] = 0.0
    exact = True
    for _ in range(50):
        f = net.forward(*random_batch(rng, int(rng.integers(1, 11)), int(rng.integers(1, 9))), track=False)[1]
        exact &= np.array_equal(f.h_spatial, f.embed_spatial) and np.array_equal(f.h_temporal, f.hidden_temporal)
    verdict(4, "residual correctness", exact, "50 states, H_spatial == E and H_temporal == H bit for bit")


def pairwise_gaps(humans, actions, dt):
    """Surface gaps at closest approach within the step, for every human pair."""
    p = np.array([[h.px, h.py, a.vx, a.vy, h.radius] for h, a in zip(humans, actions)])
    i, j = np.triu_indices(len(p), 1)
    dp, dv = p[j, :2] - p[i, :2], p[j, 2:4] - p[i, 2:4]
    vv = (dv * dv).sum(1)
    t = np.clip(np.where(vv > 0, -(dp * dv).sum(1) / np.where(vv > 0, vv, 1.0), 0.0), 0.0, dt)
    return np.hypot(*(dp + dv * t[:, None]).T) - p[i, 4] - p[j, 4]


def test_criterion_05_orca_safety():
    t0 = time.time()
    collided, worst = 0, math.inf
    for seed in range(1000):
        world = generate_scenario(ScenarioSpec(n_dynamic=2 + seed % 4, seed=seed)).without_robot()
        hit = False
        while not world.terminal:
            out = step(world, None, EP)
            gaps = pairwise_gaps(world.humans, out.human_actions, EP.dt)
            worst = min(worst, float(gaps.min()))
            hit |= bool((gaps < 0).any())
            world = out.world
        collided += hit
    # head-on pair against the sampled-velocity oracle
    params = OrcaParams()
    a = WorldAgentState(-2, 0, 1, 0, 0.3, 2, 0, 1.0)
    b = WorldAgentState(2, 0, -1, 0, 0.3, -2, 0, 1.0)
    va, vb = orca_velocity(a, [b], params, EP.dt), orca_velocity(b, [a], params, EP.dt)
    inside = []
    for me, mine, other, theirs in ((a, va, b, vb), (b, vb, a, va)):
        own = min_separation_linear(me.position, (mine.vx, mine.vy), other.position, (theirs.vx, theirs.vy),
                                    params.time_horizon)
        safe = sampled_safe_set(me, (theirs.vx, theirs.vy), other.position, 0.6, params.time_horizon)
        nearest = float(np.min(np.linalg.norm(safe - [mine.vx, mine.vy], axis=1)))
        inside.append(own > 0.6 and nearest < 0.03)
    elapsed = time.time() - t0
    verdict(5, "ORCA safety", collided == 0 and all(inside) and elapsed < 300,
            f"{collided}/1000 episodes with an overlap (min gap {worst:.4f} m), head-on pair in safe set: "
            f"{all(inside)}, {elapsed:.0f} s")


def test_criterion_06_invisible_robot():
    worst, mismatched = 0.0, 0
    kinds = [("circle_crossing", 5, 0, "DS"), ("scattered_static", 5, 2, "DS"), ("group_static", 5, 5, "RO")]
    for seed in range(100):
        kind, nd, ns, layout = kinds[seed % 3]
        spec = ScenarioSpec(kind=kind, n_dynamic=nd, n_static=ns, layout=layout, seed=seed)
        world = generate_scenario(spec)
        policy = PolicySpec("random").build(EP, OrcaParams(), 1.0, seed=seed)
        log = run_episode(world, policy, EP)
        replay = replay_humans(world, len(log.steps), EP)
        if len(replay) != len(log.steps):
            mismatched += 1
            continue
        with_robot = np.array([[(h.px, h.py, h.vx, h.vy) for h in s.humans] for s in log.steps])
        without = np.array([[(h.px, h.py, h.vx, h.vy) for h in hs] for hs in replay])
        worst = max(worst, float(np.max(np.abs(with_robot - without))))
    verdict(6, "invisible robot", mismatched == 0 and worst <= 1e-12,
            f"100 episodes, max human state difference {worst:.1e}")


def test_criterion_07_metric_oracle():
    far = 1.0
    succ = synthetic_record("reached_goal", 10.0, [0.1, 0.05, 0.15, 0.0] + [far] * 36)
    coll = synthetic_record("collision", 3.0, [far] * 11 + [-0.1])
    worked = weighted_nav_time([succ, coll], EP)
    clean = [synthetic_record("reached_goal", t, [far] * int(t / 0.25)) for t in (8.0, 9.25, 12.5)]
    s = summarize(clean, EP)
    crashes = weighted_nav_time([synthetic_record("collision", t, [-0.1]) for t in (0.25, 5.0)], EP)
    ok = worked == 17.75 and s.t_weighted_nav == s.t_succ_nav == 29.75 / 3 and crashes == 25.0
    verdict(7, "metric oracle", ok,
            f"worked example {worked}, zero-penalty {s.t_weighted_nav} vs {s.t_succ_nav}, all-collision {crashes}")


def test_criterion_08_return_recursion():
    seeds = itertools.count()
    new_world = lambda: generate_scenario(ScenarioSpec(n_dynamic=5, n_static=2, seed=next(seeds)))
    cfg = TrainConfig(il_episodes=50, il_epochs=0)
    data = il_pretrain(AstgNetwork(AstgConfig(), seed=0), cfg, EP, new_world, np.random.default_rng(0))
    disc = discount_factor(cfg.gamma, EP.dt, 1.0)
    worst, episodes = 0.0, 0
    for t, nxt in zip(data, data[1:] + [None]):
        if t.terminal:
            worst = max(worst, abs(t.target - t.reward))
            episodes += 1
        else:
            worst = max(worst, abs(t.target - (t.reward + disc * nxt.target)))
    verdict(8, "return recursion", worst <= 1e-12 and episodes > 0,
            f"{len(data)} labels from {episodes} of 50 episodes (timeouts carry no label), "
            f"max residual {worst:.1e}")


# --- desk-scale pipeline ------------------------------------------------------

_RUNS: dict = {}


def pipeline(tmp_path_factory, mode="full", run="a"):
    """IL 100 + RL 200 on 2-human circle crossing, evaluated on 100 held-out seeds."""
    key = (mode, run)
    if key not in _RUNS:
        out = tmp_path_factory.mktemp(f"{mode}_{run}")
        cfg_file = out / "input.json"
        cfg_file.write_text(json.dumps({
            "seed": PIPELINE_SEED, "cases": 100, "out": str(out),
            "scenario": {"kind": "circle_crossing", "n_dynamic": 2, "n_static": 0},
            "model": {"mode": mode},
            "train": {"il_episodes": 100, "rl_episodes": 200},
        }))
        cfg = load_config(str(cfg_file))
        t0 = time.time()
        ckpt = cmd_train(cfg)
        summary, _ = cmd_eval(replace(cfg, checkpoint=str(ckpt)))
        _RUNS[key] = (cfg, summary, out, time.time() - t0)
    return _RUNS[key]


@pytest.mark.slow
def test_criterion_09_learning_signal(tmp_path_factory):
    cfg, summary, _, elapsed = pipeline(tmp_path_factory)
    baseline = summarize(run_eval(PolicySpec("random"), cfg.scenario, cfg.eval_seeds(), cfg.episode,
                                  cfg.orca), cfg.episode)
    ok = summary.success_rate > baseline.success_rate and summary.success_rate >= 0.8
    verdict(9, "desk-scale learning signal", ok,
            f"success {summary.success_rate:.2f} vs random {baseline.success_rate:.2f} on 100 held-out "
            f"cases (collision {summary.collision_rate:.2f}, timeout {summary.timeout_rate:.2f}), "
            f"seed {PIPELINE_SEED}, {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_10_determinism(tmp_path_factory):
    _, _, first, _ = pipeline(tmp_path_factory)
    _, _, second, _ = pipeline(tmp_path_factory, run="b")
    names = ["report.txt", "metrics.json", "episodes.jsonl", "trajectories.csv", "curve.jsonl",
             "checkpoint.json"]
    differing = [n for n in names if (first / n).read_bytes() != (second / n).read_bytes()]
    verdict(10, "determinism", not differing,
            f"two pipeline runs, {len(names) - len(differing)}/{len(names)} artifacts byte-identical"
            + (f", differing: {differing}" if differing else ""))


@pytest.mark.slow
def test_criterion_11_ablation_parity(tmp_path_factory):
    rates = {}
    for mode in ("full", "spatial_only", "temporal_only"):
        _, summary, _, _ = pipeline(tmp_path_factory, mode)
        rates[mode] = summary.success_rate
    ok = all(math.isfinite(r) for r in rates.values())
    verdict(11, "ablation parity", ok,
            "all modes completed; success " + ", ".join(f"{m} {r:.2f}" for m, r in rates.items()))
