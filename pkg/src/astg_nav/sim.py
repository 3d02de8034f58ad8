"""Crowd navigation episodes: scenario generation, transitions, termination and reward."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Action, InvalidConfigError, JointState, WorldAgentState, to_robot_centric
from .orca import OrcaParams, orca_velocity, static_human_policy

SCENARIO_KINDS = ("circle_crossing", "scattered_static", "group_static")
GROUP_LAYOUTS = ("DS", "RO", "CO")
RUNNING, REACHED_GOAL, COLLISION, TIMEOUT = "running", "reached_goal", "collision", "timeout"

# initial surface separation every pair of agents must exceed
MIN_INITIAL_SEPARATION = 0.2
MAX_PLACEMENT_ATTEMPTS = 1000


class ScenarioError(RuntimeError):
    pass


class UsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "circle_crossing"
    n_dynamic: int = 5
    n_static: int = 0
    layout: str = "DS"
    circle_radius: float = 4.0
    seed: int = 0
    angle_jitter: float = 0.5
    position_jitter: float = 0.5
    human_radius: float = 0.3
    human_v_pref: float = 1.0
    robot_radius: float = 0.3
    robot_v_pref: float = 1.0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise InvalidConfigError(f"unknown scenario kind {self.kind!r}")
        if self.layout not in GROUP_LAYOUTS:
            raise InvalidConfigError(f"unknown group layout {self.layout!r}")
        if self.n_dynamic < 0 or self.n_static < 0:
            raise InvalidConfigError("human counts must be non-negative")
        if self.circle_radius <= 0:
            raise InvalidConfigError("circle_radius must be positive")


@dataclass(frozen=True)
class EpisodeConfig:
    dt: float = 0.25
    t_limit: float = 25.0
    discomfort_dist: float = 0.2

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidConfigError("dt must be positive")
        if self.t_limit <= self.dt:
            raise InvalidConfigError("t_limit must exceed dt")

    @property
    def max_steps(self) -> int:
        return int(math.ceil(self.t_limit / self.dt - 1e-9))


@dataclass(frozen=True)
class World:
    """Snapshot of every agent. ``robot`` is None in robot-free replays."""

    robot: Optional[WorldAgentState]
    humans: tuple[WorldAgentState, ...]
    static: tuple[bool, ...]
    arrived: tuple[bool, ...] = ()
    steps: int = 0
    cause: str = RUNNING

    def __post_init__(self):
        if not self.arrived:
            object.__setattr__(self, "arrived", (False,) * len(self.humans))

    @property
    def terminal(self) -> bool:
        return self.cause != RUNNING

    def time(self, dt: float) -> float:
        return self.steps * dt

    def observe(self) -> JointState:
        return to_robot_centric(self.robot, self.humans)

    def without_robot(self) -> World:
        return replace(self, robot=None)


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    world: World
    terminal: bool
    cause: str
    d_min: float
    human_actions: tuple[Action, ...] = field(default=())


# --- scenario generation -------------------------------------------------

def circle_human(angle: float, spec: ScenarioSpec, jitter=(0.0, 0.0)) -> WorldAgentState:
    """Dynamic human on the circle at ``angle`` heading to the antipodal point."""
    px = spec.circle_radius * math.cos(angle) + jitter[0]
    py = spec.circle_radius * math.sin(angle) + jitter[1]
    return WorldAgentState(px, py, 0.0, 0.0, spec.human_radius, -px, -py, spec.human_v_pref)


def _static_human(x: float, y: float, spec: ScenarioSpec) -> WorldAgentState:
    return WorldAgentState(x, y, 0.0, 0.0, spec.human_radius, x, y, spec.human_v_pref)


def _clear(candidates: Sequence[tuple[float, float, float]],
           placed: Sequence[tuple[float, float, float]]) -> bool:
    for x, y, r in candidates:
        for px, py, pr in placed:
            if math.hypot(x - px, y - py) - r - pr <= MIN_INITIAL_SEPARATION:
                return False
    return True


def _row_layout(m: int, spacing: float) -> list[tuple[float, float]]:
    first = (m + 1) // 2
    rows = [first, m - first]
    pts = []
    for row, count in enumerate(rows):
        for k in range(count):
            pts.append(((k - (count - 1) / 2) * spacing, (row - 0.5) * spacing))
    return pts


def _arc_layout(m: int, spacing: float) -> list[tuple[float, float]]:
    if m == 1:
        return [(-1.0, 0.0)]
    step = math.pi / (m - 1)
    radius = max(1.0, spacing / (2 * math.sin(step / 2)))
    # semicircle opening toward +x
    return [(radius * math.cos(math.pi / 2 + k * step), radius * math.sin(math.pi / 2 + k * step))
            for k in range(m)]


def _group_statics(spec: ScenarioSpec, rng: np.random.Generator, placed) -> list[WorldAgentState]:
    m = spec.n_static
    if m == 0:
        return []
    spacing = max(0.8, 2 * spec.human_radius + MIN_INITIAL_SEPARATION + 0.05)
    local = _row_layout(m, spacing) if spec.layout == "RO" else _arc_layout(m, spacing)
    extent = max(math.hypot(x, y) for x, y in local)
    reach = max(spec.circle_radius - extent - spec.human_radius, 0.0)
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        rad = reach * math.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * math.pi)
        theta = rng.uniform(0, 2 * math.pi)
        cx, cy = rad * math.cos(phi), rad * math.sin(phi)
        c, s = math.cos(theta), math.sin(theta)
        pts = [(cx + c * x - s * y, cy + s * x + c * y) for x, y in local]
        if _clear([(x, y, spec.human_radius) for x, y in pts], placed):
            return [_static_human(x, y, spec) for x, y in pts]
    raise ScenarioError(f"could not place {spec.layout} group after {MAX_PLACEMENT_ATTEMPTS} attempts")


def generate_scenario(spec: ScenarioSpec) -> World:
    """Initial world for ``spec``; reproducible from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    R = spec.circle_radius
    robot = WorldAgentState(0.0, -R, 0.0, 0.0, spec.robot_radius, 0.0, R, spec.robot_v_pref)
    starts = [(robot.px, robot.py, robot.radius)]
    goals = [(robot.gx, robot.gy, robot.radius)]

    statics: list[WorldAgentState] = []
    if spec.kind == "group_static" and spec.layout != "DS":
        statics = _group_statics(spec, rng, starts + goals)
    else:
        for _ in range(spec.n_static):
            for _ in range(MAX_PLACEMENT_ATTEMPTS):
                rad = R * math.sqrt(rng.uniform())
                phi = rng.uniform(0, 2 * math.pi)
                x, y = rad * math.cos(phi), rad * math.sin(phi)
                if _clear([(x, y, spec.human_radius)], starts + goals):
                    break
            else:
                raise ScenarioError(f"could not place static human after {MAX_PLACEMENT_ATTEMPTS} attempts")
            statics.append(_static_human(x, y, spec))
            starts.append((x, y, spec.human_radius))
    if spec.kind == "group_static" and spec.layout != "DS":
        starts += [(h.px, h.py, h.radius) for h in statics]
    obstacles = list(starts)

    dynamics: list[WorldAgentState] = []
    for _ in range(spec.n_dynamic):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            angle = rng.uniform(0, 2 * math.pi) + rng.uniform(-spec.angle_jitter, spec.angle_jitter)
            jitter = rng.uniform(-spec.position_jitter, spec.position_jitter, size=2)
            h = circle_human(angle, spec, (float(jitter[0]), float(jitter[1])))
            if (_clear([(h.px, h.py, h.radius)], obstacles)
                    and _clear([(h.gx, h.gy, h.radius)], goals + obstacles[1:])):
                break
        else:
            raise ScenarioError(f"could not place dynamic human after {MAX_PLACEMENT_ATTEMPTS} attempts")
        dynamics.append(h)
        obstacles.append((h.px, h.py, h.radius))
        goals.append((h.gx, h.gy, h.radius))

    humans = tuple(dynamics + statics)
    static = (False,) * len(dynamics) + (True,) * len(statics)
    return World(robot, humans, static)


# --- transitions ---------------------------------------------------------

def reward_fn(d_min: float, reached: bool, collided: bool, cfg: EpisodeConfig) -> float:
    if reached and collided:
        raise UsageError("an episode cannot both reach the goal and collide")
    if collided:
        return -0.25
    if reached:
        return 1.0
    if 0.0 <= d_min < cfg.discomfort_dist:
        return 0.5 * (d_min - cfg.discomfort_dist)
    return 0.0


def cpa_distance(px, py, vx, vy, dt):
    """Minimum of |p + v t| over t in [0, dt]; works elementwise on arrays."""
    vv = vx * vx + vy * vy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(vv > 0, -(px * vx + py * vy) / np.where(vv > 0, vv, 1.0), 0.0)
    t = np.clip(t, 0.0, dt)
    return np.hypot(px + vx * t, py + vy * t)


def human_actions(world: World, orca: OrcaParams, dt: float) -> list[Action]:
    """Humans act on the human-only world; the robot is invisible to them."""
    humans = world.humans
    passive = [s or a for s, a in zip(world.static, world.arrived)]
    actions = []
    for i, h in enumerate(humans):
        if passive[i]:
            actions.append(static_human_policy(h))
            continue
        others = [o for j, o in enumerate(humans) if j != i]
        share = [1.0 if passive[j] else 0.5 for j in range(len(humans)) if j != i]
        actions.append(orca_velocity(h, others, orca, dt, share))
    return actions


def min_separation(robot: WorldAgentState, robot_action: Action,
                   humans: Sequence[WorldAgentState], actions: Sequence[Action], dt: float) -> float:
    """Smallest robot-human surface separation along the linear motions over dt."""
    if not humans:
        return math.inf
    h = np.array([[o.px, o.py, a.vx, a.vy, o.radius] for o, a in zip(humans, actions)])
    d = cpa_distance(h[:, 0] - robot.px, h[:, 1] - robot.py,
                     h[:, 2] - robot_action.vx, h[:, 3] - robot_action.vy, dt)
    return float(np.min(d - h[:, 4] - robot.radius))


def _advance_humans(world: World, actions: Sequence[Action], dt: float):
    moved, arrived = [], []
    for h, a, done in zip(world.humans, actions, world.arrived):
        nh = h.moved(a.vx, a.vy, dt)
        if not done and nh.goal_distance() < nh.radius:
            done = True
        if done:
            nh = nh.with_velocity(0.0, 0.0)
        moved.append(nh)
        arrived.append(done)
    return tuple(moved), tuple(arrived)


def step(world: World, robot_action: Optional[Action], cfg: EpisodeConfig,
         orca: OrcaParams = OrcaParams()) -> StepOutcome:
    if world.terminal:
        raise UsageError(f"episode already terminated ({world.cause})")
    dt = cfg.dt
    actions = human_actions(world, orca, dt)
    humans, arrived = _advance_humans(world, actions, dt)
    steps = world.steps + 1
    timed_out = steps * dt >= cfg.t_limit - 1e-9

    if world.robot is None:
        cause = TIMEOUT if timed_out else RUNNING
        new = World(None, humans, world.static, arrived, steps, cause)
        return StepOutcome(0.0, new, new.terminal, cause, math.inf, tuple(actions))

    robot = world.robot
    d_min = min_separation(robot, robot_action, world.humans, actions, dt)
    new_robot = robot.moved(robot_action.vx, robot_action.vy, dt)
    collided = d_min < 0
    reached = not collided and new_robot.goal_distance() < new_robot.radius
    if collided:
        cause = COLLISION
    elif reached:
        cause = REACHED_GOAL
    elif timed_out:
        cause = TIMEOUT
    else:
        cause = RUNNING
    reward = reward_fn(d_min, reached, collided, cfg)
    new = World(new_robot, humans, world.static, arrived, steps, cause)
    return StepOutcome(reward, new, new.terminal, cause, d_min, tuple(actions))


# --- one-step lookahead --------------------------------------------------

@dataclass(frozen=True)
class Lookahead:
    """Propagated robot states and immediate rewards for a batch of actions.

    Humans move at constant velocity; ``human_raw`` holds their propagated
    (px, py, vx, vy, radius) rows, shared across actions.
    """

    robot_pos: np.ndarray   # (B, 2)
    robot_vel: np.ndarray   # (B, 2)
    rewards: np.ndarray     # (B,)
    terminal: np.ndarray    # (B,) bool
    human_raw: np.ndarray   # (n, 5)


def lookahead(world: World, actions: Sequence[Action], cfg: EpisodeConfig) -> Lookahead:
    robot = world.robot
    dt = cfg.dt
    vel = np.array([[a.vx, a.vy] for a in actions])
    pos = np.array([robot.px, robot.py]) + vel * dt
    goal_dist = np.hypot(robot.gx - pos[:, 0], robot.gy - pos[:, 1])
    reached = goal_dist < robot.radius
    if world.humans:
        h = np.array([[o.px, o.py, o.vx, o.vy, o.radius] for o in world.humans])
        d = cpa_distance(h[None, :, 0] - robot.px, h[None, :, 1] - robot.py,
                         h[None, :, 2] - vel[:, 0:1], h[None, :, 3] - vel[:, 1:2], dt)
        d_min = np.min(d - h[None, :, 4] - robot.radius, axis=1)
        human_raw = h.copy()
        human_raw[:, 0] += h[:, 2] * dt
        human_raw[:, 1] += h[:, 3] * dt
    else:
        d_min = np.full(len(actions), np.inf)
        human_raw = np.zeros((0, 5))
    collided = d_min < 0
    reached &= ~collided
    discomfort = (d_min >= 0) & (d_min < cfg.discomfort_dist)
    rewards = np.where(collided, -0.25,
                       np.where(reached, 1.0,
                                np.where(discomfort, 0.5 * (d_min - cfg.discomfort_dist), 0.0)))
    return Lookahead(pos, vel, rewards, collided | reached, human_raw)


# --- episodes ------------------------------------------------------------

Policy = Callable[[World, Sequence[JointState]], Action]


@dataclass
class StepRecord:
    time: float
    robot: WorldAgentState
    humans: tuple[WorldAgentState, ...]
    action: Action
    reward: float
    d_min: float


@dataclass
class EpisodeLog:
    initial: World
    steps: list[StepRecord]
    observations: list[JointState]
    cause: str
    final: World

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]


def run_episode(world: World, policy: Policy, cfg: EpisodeConfig,
                orca: OrcaParams = OrcaParams()) -> EpisodeLog:
    """Roll ``policy`` out from ``world`` until termination.

    The policy sees the world and the list of robot-centric observations so
    far (current one last). ``observations`` in the log holds the state
    before every step plus the terminal one.
    """
    initial = world
    observations = [world.observe()]
    records = []
    while True:
        action = policy(world, observations)
        out = step(world, action, cfg, orca)
        records.append(StepRecord(out.world.time(cfg.dt), out.world.robot, out.world.humans,
                                  action, out.reward, out.d_min))
        world = out.world
        observations.append(world.observe())
        if out.terminal:
            return EpisodeLog(initial, records, observations, out.cause, world)


def replay_humans(world: World, n_steps: int, cfg: EpisodeConfig,
                  orca: OrcaParams = OrcaParams()) -> list[tuple[WorldAgentState, ...]]:
    """Human trajectories over ``n_steps`` with the robot removed."""
    world = replace(world.without_robot(), cause=RUNNING)
    traj = []
    for _ in range(n_steps):
        out = step(world, None, cfg, orca)
        traj.append(out.world.humans)
        world = out.world
        if out.terminal:
            break
    return traj


def orca_robot_policy(orca: OrcaParams, cfg: EpisodeConfig) -> Policy:
    """Robot driven by ORCA, taking full responsibility since humans ignore it."""
    def policy(world: World, observations) -> Action:
        robot = world.robot
        return orca_velocity(robot, list(world.humans), orca, cfg.dt, [1.0] * len(world.humans))
    return policy
