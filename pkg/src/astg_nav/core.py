"""Agent state types, the robot-centric transform and the discrete action space."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ROBOT_STATE_DIM = 5
HUMAN_STATE_DIM = 7

# below this robot-goal distance the frame is left unrotated
DEGENERATE_GOAL_DIST = 1e-9


class InvalidConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldAgentState:
    px: float
    py: float
    vx: float
    vy: float
    radius: float
    gx: float = 0.0
    gy: float = 0.0
    v_pref: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidConfigError(f"agent radius must be positive, got {self.radius}")
        if self.v_pref <= 0:
            raise InvalidConfigError(f"preferred speed must be positive, got {self.v_pref}")

    @property
    def position(self) -> tuple[float, float]:
        return (self.px, self.py)

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.vx, self.vy)

    @property
    def goal(self) -> tuple[float, float]:
        return (self.gx, self.gy)

    def goal_distance(self) -> float:
        return math.hypot(self.gx - self.px, self.gy - self.py)

    def moved(self, vx: float, vy: float, dt: float) -> WorldAgentState:
        """State after moving with velocity (vx, vy) for dt seconds."""
        return WorldAgentState(self.px + vx * dt, self.py + vy * dt, vx, vy,
                               self.radius, self.gx, self.gy, self.v_pref)

    def with_velocity(self, vx: float, vy: float) -> WorldAgentState:
        return WorldAgentState(self.px, self.py, vx, vy, self.radius, self.gx, self.gy, self.v_pref)


@dataclass(frozen=True)
class RobotCentricRobotState:
    d_g: float
    vx: float
    vy: float
    v_pref: float
    radius: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d_g, self.vx, self.vy, self.v_pref, self.radius])


@dataclass(frozen=True)
class RobotCentricHumanState:
    px: float
    py: float
    vx: float
    vy: float
    radius: float
    dist: float
    radius_sum: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.vx, self.vy, self.radius, self.dist, self.radius_sum])


@dataclass(frozen=True)
class JointState:
    """Robot-centric joint observation.

    ``robot_array`` has shape (5,) and ``human_array`` shape (n, 7); both
    follow the field order of the corresponding state classes.
    """

    robot_array: np.ndarray
    human_array: np.ndarray
    # frame used to build this state: origin and rotation angle
    origin: tuple[float, float] = (0.0, 0.0)
    angle: float = 0.0

    @property
    def n_humans(self) -> int:
        return self.human_array.shape[0]

    @property
    def robot(self) -> RobotCentricRobotState:
        return RobotCentricRobotState(*(float(x) for x in self.robot_array))

    @property
    def humans(self) -> list[RobotCentricHumanState]:
        return [RobotCentricHumanState(*(float(x) for x in row)) for row in self.human_array]


@dataclass(frozen=True)
class Action:
    vx: float
    vy: float

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


STOP = Action(0.0, 0.0)


def frame_angle(robot: WorldAgentState) -> float:
    if robot.goal_distance() < DEGENERATE_GOAL_DIST:
        return 0.0
    return math.atan2(robot.gy - robot.py, robot.gx - robot.px)


def to_robot_centric(robot: WorldAgentState, humans: Sequence[WorldAgentState]) -> JointState:
    """Express robot and humans in the frame centred on the robot with x toward its goal."""
    angle = frame_angle(robot)
    c, s = math.cos(angle), math.sin(angle)
    d_g = robot.goal_distance()
    robot_arr = np.array([
        d_g,
        c * robot.vx + s * robot.vy,
        -s * robot.vx + c * robot.vy,
        robot.v_pref,
        robot.radius,
    ])
    if humans:
        raw = np.array([[h.px, h.py, h.vx, h.vy, h.radius] for h in humans])
        return JointState(robot_arr, _human_rows(raw, robot, c, s), (robot.px, robot.py), angle)
    return JointState(robot_arr, np.zeros((0, HUMAN_STATE_DIM)), (robot.px, robot.py), angle)


def _human_rows(raw: np.ndarray, robot: WorldAgentState, c: float, s: float) -> np.ndarray:
    dx = raw[:, 0] - robot.px
    dy = raw[:, 1] - robot.py
    out = np.empty((raw.shape[0], HUMAN_STATE_DIM))
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = c * raw[:, 2] + s * raw[:, 3]
    out[:, 3] = -s * raw[:, 2] + c * raw[:, 3]
    out[:, 4] = raw[:, 4]
    out[:, 5] = np.hypot(out[:, 0], out[:, 1])
    out[:, 6] = raw[:, 4] + robot.radius
    return out


def from_robot_centric(state: JointState, x: float, y: float) -> tuple[float, float]:
    """Map a point from the state's robot-centric frame back to world coordinates."""
    c, s = math.cos(state.angle), math.sin(state.angle)
    return (state.origin[0] + c * x - s * y, state.origin[1] + s * x + c * y)


def action_speeds(v_pref: float, n_speeds: int = 5) -> list[float]:
    return [(math.exp((k + 1) / n_speeds) - 1) / (math.e - 1) * v_pref for k in range(n_speeds)]


def build_action_space(v_pref: float, n_speeds: int = 5, n_headings: int = 16) -> list[Action]:
    """Stop action followed by speeds x headings (speed-major order)."""
    if v_pref <= 0:
        raise InvalidConfigError(f"v_pref must be positive, got {v_pref}")
    actions = [STOP]
    headings = [2 * math.pi * k / n_headings for k in range(n_headings)]
    for speed in action_speeds(v_pref, n_speeds):
        for theta in headings:
            actions.append(Action(speed * math.cos(theta), speed * math.sin(theta)))
    return actions


def clip_speed(vx: float, vy: float, v_max: float) -> tuple[float, float]:
    speed = math.hypot(vx, vy)
    if speed > v_max:
        return vx * v_max / speed, vy * v_max / speed
    return vx, vy
