"""Deep V-learning: imitation bootstrap from ORCA demonstrations, then TD learning."""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .astg import AstgNetwork, HistoryWindow
from .core import HUMAN_STATE_DIM, Action, InvalidConfigError, JointState
from .orca import OrcaParams
from .sim import (REACHED_GOAL, EpisodeConfig, World, lookahead, orca_robot_policy,
                  run_episode, step)

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    il_episodes: int = 3000
    rl_episodes: int = 7000
    il_epochs: int = 50
    batch_size: int = 100
    il_lr: float = 1e-3
    rl_lr: float = 1e-4
    momentum: float = 0.0
    target_sync_episodes: int = 50
    epsilon_start: float = 0.5
    epsilon_end: float = 0.1
    epsilon_decay_fraction: float = 0.4
    replay_capacity: int = 100_000
    updates_per_step: int = 1
    checkpoint_interval: int = 1000

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InvalidConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.batch_size < 1 or self.replay_capacity < 1:
            raise InvalidConfigError("batch_size and replay_capacity must be positive")
        if self.il_episodes < 0 or self.rl_episodes < 0 or self.il_epochs < 0:
            raise InvalidConfigError("episode and epoch counts must be non-negative")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise InvalidConfigError("need 0 <= epsilon_end <= epsilon_start <= 1")


def discount_factor(gamma: float, dt: float, v_pref: float) -> float:
    return gamma ** (dt * v_pref)


def epsilon_at(episode: int, cfg: TrainConfig) -> float:
    """Linear decay over the first ``epsilon_decay_fraction`` of RL episodes, then flat."""
    decay = cfg.epsilon_decay_fraction * cfg.rl_episodes
    if decay <= 0 or episode >= decay:
        return cfg.epsilon_end
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * episode / decay


@dataclass(frozen=True)
class Transition:
    state: JointState
    history: HistoryWindow
    reward: float
    next_state: Optional[JointState]
    next_history: Optional[HistoryWindow]
    terminal: bool
    dt: float
    v_pref: float
    # Monte Carlo return, set on imitation samples only
    target: Optional[float] = None


class ReplayBuffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def push(self, t: Transition) -> None:
        self._items.append(t)

    def extend(self, items: Iterable[Transition]) -> None:
        for t in items:
            self.push(t)

    def sample(self, rng: np.random.Generator, batch_size: int) -> list[Transition]:
        idx = rng.choice(len(self._items), size=min(batch_size, len(self._items)), replace=False)
        return [self._items[i] for i in idx]


class SGD:
    """Plain SGD with optional momentum; updates parameter arrays in place."""

    def __init__(self, params: dict[str, ad.Tensor], lr: float, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self._velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        for k, p in self.params.items():
            if p.grad is None:
                continue
            if self.momentum:
                v = self._velocity[k]
                v *= self.momentum
                v += p.grad
                p.data -= self.lr * v
            else:
                p.data -= self.lr * p.grad


# --- value batches ---------------------------------------------------------

def _group_by_shape(states: Sequence[JointState], histories: Sequence[HistoryWindow]):
    groups: dict[tuple[int, int], list[int]] = {}
    for i, (s, h) in enumerate(zip(states, histories)):
        groups.setdefault((s.n_humans, h.length), []).append(i)
    return groups


def batch_values(net: AstgNetwork, states: Sequence[JointState],
                 histories: Sequence[HistoryWindow]) -> np.ndarray:
    out = np.empty(len(states))
    for idx in _group_by_shape(states, histories).values():
        v, _ = net.forward(np.stack([states[i].robot_array for i in idx]),
                           np.stack([states[i].human_array for i in idx]),
                           np.stack([histories[i].frames for i in idx]), track=False)
        out[idx] = v.data
    return out


def regression_step(net: AstgNetwork, opt: SGD, states: Sequence[JointState],
                    histories: Sequence[HistoryWindow], targets: np.ndarray) -> float:
    """One gradient step on the mean squared error; returns the loss."""
    net.zero_grad()
    total = None
    for idx in _group_by_shape(states, histories).values():
        v, _ = net.forward(np.stack([states[i].robot_array for i in idx]),
                           np.stack([states[i].human_array for i in idx]),
                           np.stack([histories[i].frames for i in idx]))
        diff = ad.sub(v, ad.Tensor(targets[idx]))
        sq = ad.sum_all(ad.mul(diff, diff))
        total = sq if total is None else ad.add(total, sq)
    loss = ad.scalar_mul(total, 1.0 / len(states))
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDivergedError(
            f"non-finite loss {value} on batch of {len(states)}; targets in "
            f"[{np.min(targets)}, {np.max(targets)}]")
    ad.backward(loss)
    opt.step()
    return value


# --- action selection --------------------------------------------------------

def robot_centric_batch(pos: np.ndarray, vel: np.ndarray, goal: tuple[float, float],
                        v_pref: float, radius: float, human_raw: np.ndarray):
    """Robot-centric robot (B, 5) and human (B, n, 7) arrays for B robot states."""
    gx, gy = goal[0] - pos[:, 0], goal[1] - pos[:, 1]
    d_g = np.hypot(gx, gy)
    degenerate = d_g < 1e-9
    angle = np.where(degenerate, 0.0, np.arctan2(gy, gx))
    c, s = np.cos(angle), np.sin(angle)
    B = pos.shape[0]
    robot = np.empty((B, 5))
    robot[:, 0] = d_g
    robot[:, 1] = c * vel[:, 0] + s * vel[:, 1]
    robot[:, 2] = -s * vel[:, 0] + c * vel[:, 1]
    robot[:, 3] = v_pref
    robot[:, 4] = radius
    n = human_raw.shape[0]
    humans = np.empty((B, n, HUMAN_STATE_DIM))
    if n:
        c2, s2 = c[:, None], s[:, None]
        dx = human_raw[None, :, 0] - pos[:, 0:1]
        dy = human_raw[None, :, 1] - pos[:, 1:2]
        humans[:, :, 0] = c2 * dx + s2 * dy
        humans[:, :, 1] = -s2 * dx + c2 * dy
        humans[:, :, 2] = c2 * human_raw[None, :, 2] + s2 * human_raw[None, :, 3]
        humans[:, :, 3] = -s2 * human_raw[None, :, 2] + c2 * human_raw[None, :, 3]
        humans[:, :, 4] = human_raw[None, :, 4]
        humans[:, :, 5] = np.hypot(humans[:, :, 0], humans[:, :, 1])
        humans[:, :, 6] = human_raw[None, :, 4] + radius
    return robot, humans


def action_scores(world: World, history: HistoryWindow, net: AstgNetwork,
                  actions: Sequence[Action], gamma: float, cfg: EpisodeConfig) -> np.ndarray:
    """R(s, a) + discount * V(s') for every action, with s' from constant-velocity humans.

    Lookahead states that end the episode are not bootstrapped.
    """
    robot = world.robot
    la = lookahead(world, actions, cfg)
    rob, hum = robot_centric_batch(la.robot_pos, la.robot_vel, robot.goal, robot.v_pref,
                                   robot.radius, la.human_raw)
    B = len(actions)
    k = net.cfg.history_len
    past = np.broadcast_to(history.frames[None, :, -(k - 1):] if k > 1 else history.frames[None, :, :0],
                           (B,) + (history.frames.shape[0], min(history.length, k - 1), HUMAN_STATE_DIM))
    hist = np.concatenate([past, hum[:, :, None, :]], axis=2)
    values, _ = net.forward(rob, hum, hist, track=False)
    disc = discount_factor(gamma, cfg.dt, robot.v_pref)
    return la.rewards + disc * np.where(la.terminal, 0.0, values.data)


def select_action(world: World, history: HistoryWindow, net: AstgNetwork,
                  actions: Sequence[Action], epsilon: float, rng: Optional[np.random.Generator],
                  gamma: float, cfg: EpisodeConfig) -> int:
    """Index of the chosen action; ties go to the lowest index."""
    if not actions:
        raise InvalidConfigError("action space is empty")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(len(actions)))
    return int(np.argmax(action_scores(world, history, net, actions, gamma, cfg)))


def value_policy(net: AstgNetwork, actions: Sequence[Action], gamma: float, cfg: EpisodeConfig,
                 epsilon: float = 0.0, rng: Optional[np.random.Generator] = None):
    k = net.cfg.history_len

    def policy(world: World, observations: Sequence[JointState]) -> Action:
        history = HistoryWindow.from_states(observations, k)
        return actions[select_action(world, history, net, actions, epsilon, rng, gamma, cfg)]
    return policy


# --- imitation learning ----------------------------------------------------

def discounted_returns(rewards: Sequence[float], gamma: float, dt: float, v_pref: float) -> np.ndarray:
    """y_t = sum_{t' >= t} gamma^((t' - t) * dt * v_pref) * r_t'."""
    disc = discount_factor(gamma, dt, v_pref)
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + disc * acc
        out[t] = acc
    return out


def episode_transitions(observations: Sequence[JointState], rewards: Sequence[float],
                        terminal_last: bool, k: int, dt: float, v_pref: float,
                        targets: Optional[np.ndarray] = None) -> list[Transition]:
    out = []
    T = len(rewards)
    for t in range(T):
        terminal = terminal_last and t == T - 1
        nxt = None if terminal else observations[t + 1]
        nxt_hist = None if terminal else HistoryWindow.from_states(observations[:t + 2], k)
        out.append(Transition(observations[t], HistoryWindow.from_states(observations[:t + 1], k),
                              rewards[t], nxt, nxt_hist, terminal, dt, v_pref,
                              None if targets is None else float(targets[t])))
    return out


@dataclass
class CurveEntry:
    phase: str
    episode: int
    ret: float
    outcome: str
    loss: Optional[float]
    epsilon: Optional[float] = None

    def to_dict(self) -> dict:
        return {"phase": self.phase, "episode": self.episode, "return": self.ret,
                "outcome": self.outcome, "loss": self.loss, "epsilon": self.epsilon}


def episode_return(rewards: Sequence[float], gamma: float, dt: float, v_pref: float) -> float:
    return float(discounted_returns(rewards, gamma, dt, v_pref)[0]) if rewards else 0.0


def il_pretrain(net: AstgNetwork, cfg: TrainConfig, ep_cfg: EpisodeConfig,
                new_world: Callable[[], World], rng: np.random.Generator,
                orca: OrcaParams = OrcaParams(),
                on_curve: Optional[Callable[[CurveEntry], None]] = None) -> list[Transition]:
    """Fit V to discounted returns of ORCA-driven demonstrations.

    Timeout demonstrations carry no useful label and are dropped. Returns the
    labelled transitions so they can seed the replay buffer.
    """
    if cfg.il_episodes <= 0:
        raise InvalidConfigError("il_episodes must be positive for imitation learning")
    k = net.cfg.history_len
    demo_policy = orca_robot_policy(orca, ep_cfg)
    data: list[Transition] = []
    for ep in range(cfg.il_episodes):
        world = new_world()
        episode = run_episode(world, demo_policy, ep_cfg, orca)
        v_pref = world.robot.v_pref
        rewards = episode.rewards
        if on_curve:
            on_curve(CurveEntry("il_demo", ep, episode_return(rewards, cfg.gamma, ep_cfg.dt, v_pref),
                                episode.cause, None))
        if episode.cause not in (REACHED_GOAL, "collision"):
            continue
        labels = discounted_returns(rewards, cfg.gamma, ep_cfg.dt, v_pref)
        data.extend(episode_transitions(episode.observations, rewards, True, k,
                                        ep_cfg.dt, v_pref, labels))
    if not data:
        log.warning("no usable demonstrations; skipping imitation fit")
        return data

    opt = SGD(net.params, cfg.il_lr, cfg.momentum)
    targets = np.array([t.target for t in data])
    for epoch in range(cfg.il_epochs):
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            losses.append(regression_step(net, opt, [data[i].state for i in idx],
                                          [data[i].history for i in idx], targets[idx]))
        if on_curve:
            on_curve(CurveEntry("il_fit", epoch, float("nan"), "epoch", float(np.mean(losses))))
        log.debug("il epoch %d loss %.5f", epoch, np.mean(losses))
    return data


# --- temporal-difference learning ------------------------------------------

def td_targets(batch: Sequence[Transition], target_net: AstgNetwork, gamma: float) -> np.ndarray:
    """r + discount * V_target(s'), or r alone for terminal transitions."""
    y = np.array([t.reward for t in batch])
    boot = [i for i, t in enumerate(batch) if not t.terminal]
    if boot:
        v = batch_values(target_net, [batch[i].next_state for i in boot],
                         [batch[i].next_history for i in boot])
        for j, i in enumerate(boot):
            y[i] += discount_factor(gamma, batch[i].dt, batch[i].v_pref) * v[j]
    return y


def rl_train(net: AstgNetwork, cfg: TrainConfig, ep_cfg: EpisodeConfig,
             actions: Sequence[Action], new_world: Callable[[], World],
             explore_rng: np.random.Generator, replay_rng: np.random.Generator,
             orca: OrcaParams = OrcaParams(), replay: Optional[ReplayBuffer] = None,
             on_curve: Optional[Callable[[CurveEntry], None]] = None,
             on_checkpoint: Optional[Callable[[int, AstgNetwork], None]] = None) -> list[CurveEntry]:
    k = net.cfg.history_len
    replay = replay if replay is not None else ReplayBuffer(cfg.replay_capacity)
    target_net = net.copy()
    opt = SGD(net.params, cfg.rl_lr, cfg.momentum)
    curve = []
    for ep in range(cfg.rl_episodes):
        eps = epsilon_at(ep, cfg)
        world = new_world()
        observations = [world.observe()]
        rewards, losses = [], []
        while True:
            history = HistoryWindow.from_states(observations, k)
            a = actions[select_action(world, history, net, actions, eps, explore_rng, cfg.gamma, ep_cfg)]
            out = step(world, a, ep_cfg, orca)
            observations.append(out.world.observe())
            rewards.append(out.reward)
            replay.push(Transition(observations[-2], history, out.reward,
                                   None if out.terminal else observations[-1],
                                   None if out.terminal else HistoryWindow.from_states(observations, k),
                                   out.terminal, ep_cfg.dt, world.robot.v_pref))
            world = out.world
            if len(replay) >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    batch = replay.sample(replay_rng, cfg.batch_size)
                    y = td_targets(batch, target_net, cfg.gamma)
                    losses.append(regression_step(net, opt, [t.state for t in batch],
                                                  [t.history for t in batch], y))
            if out.terminal:
                break
        if (ep + 1) % cfg.target_sync_episodes == 0:
            target_net.load_arrays(net.arrays())
        entry = CurveEntry("rl", ep, episode_return(rewards, cfg.gamma, ep_cfg.dt, world.robot.v_pref),
                           out.cause, float(np.mean(losses)) if losses else None, eps)
        curve.append(entry)
        if on_curve:
            on_curve(entry)
        if on_checkpoint and cfg.checkpoint_interval and (ep + 1) % cfg.checkpoint_interval == 0:
            on_checkpoint(ep + 1, net)
    return curve
