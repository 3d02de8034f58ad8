import numpy as np
import pytest

from astg_nav.astg import AstgConfig, AstgNetwork

# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_batch(rng, n, k, b=1):
    robot = rng.normal(size=(b, 5))
    humans = rng.normal(size=(b, n, 7))
    history = rng.normal(size=(b, n, k, 7))
    history[:, :, -1] = humans
    return robot, humans, history


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def net():
    return AstgNetwork(AstgConfig(), seed=7)


def synthetic_record(outcome, nav_time, d_mins, seed=0):
    """EpisodeRecord with only the fields the metrics read."""
    from astg_nav.evaluate import EpisodeRecord
    agent = {"p": [0.0, 0.0], "v": [0.0, 0.0]}
    steps = [{"t": 0.0, "robot": agent, "humans": [], "action": None, "reward": None, "d_min": None}]
    steps += [{"t": 0.25 * (i + 1), "robot": agent, "humans": [], "action": [0.0, 0.0], "reward": 0.0,
               "d_min": d} for i, d in enumerate(d_mins)]
    return EpisodeRecord(seed, {}, steps, outcome, nav_time)


def min_separation_linear(pa, va, pb, vb, horizon):
    """Closest approach of two discs' centres moving linearly over [0, horizon]."""
    dp = np.asarray(pb, float) - np.asarray(pa, float)
    dv = np.asarray(vb, float) - np.asarray(va, float)
    vv = dv @ dv
    t = 0.0 if vv == 0 else min(max(-(dp @ dv) / vv, 0.0), horizon)
    return float(np.linalg.norm(dp + dv * t))


def sampled_safe_set(agent, other_velocity, other_pos, combined, horizon, n=10_000, seed=0):
    """Velocities in the speed disc whose extrapolation keeps clear of the other agent."""
    rng = np.random.default_rng(seed)
    r = agent.v_pref * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0, 2 * np.pi, size=n)
    samples = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    safe = np.array([min_separation_linear(agent.position, v, other_pos, other_velocity, horizon) > combined
                     for v in samples])
    return samples[safe]
