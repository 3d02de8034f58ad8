"""Optimal reciprocal collision avoidance for disc agents.

The half-plane construction and the incremental linear programs follow the
reference RVO2 library. There are no polygonal obstacles; neighbours that do
not react (static or arrived humans) take their place, so their constraints
are solved first and never relaxed when the program is infeasible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import Action, InvalidConfigError, WorldAgentState, clip_speed

RVO_EPSILON = 1e-5


@dataclass(frozen=True)
class OrcaParams:
    neighbor_dist: float = 10.0
    time_horizon: float = 5.0
    time_horizon_obst: float = 5.0
    max_neighbors: int = 10
    # radius buffer; also absorbs rounding on constraint boundaries and the
    # overlaps left when a dense crossing makes the program infeasible
    safety_margin: float = 0.1

    def __post_init__(self):
        if self.neighbor_dist <= 0 or self.time_horizon <= 0 or self.time_horizon_obst <= 0:
            raise InvalidConfigError("ORCA distances and horizons must be positive")
        if self.max_neighbors < 1:
            raise InvalidConfigError("max_neighbors must be at least 1")
        if self.safety_margin <= 0:
            raise InvalidConfigError("safety_margin must be positive")


@dataclass(frozen=True)
class HalfPlane:
    """Permitted velocities v satisfy (v - point) . normal >= 0."""

    point: tuple[float, float]
    normal: tuple[float, float]

    @property
    def direction(self) -> tuple[float, float]:
        # the line direction keeps the feasible side on its left
        return (self.normal[1], -self.normal[0])

    def violation(self, v: tuple[float, float]) -> float:
        return -((v[0] - self.point[0]) * self.normal[0] + (v[1] - self.point[1]) * self.normal[1])


# internal line form: (point_x, point_y, dir_x, dir_y), feasible side on the left
_Line = tuple[float, float, float, float]


def _det(ax, ay, bx, by):
    return ax * by - ay * bx


def preferred_velocity(agent: WorldAgentState, dt: float) -> tuple[float, float]:
    dx, dy = agent.gx - agent.px, agent.gy - agent.py
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return (0.0, 0.0)
    if dist < agent.v_pref * dt:
        return (dx / dt, dy / dt)
    return (dx / dist * agent.v_pref, dy / dist * agent.v_pref)


def select_neighbors(agent: WorldAgentState, neighbors: Sequence[WorldAgentState],
                     params: OrcaParams) -> list[int]:
    """Indices of the closest neighbours within range, returned in index order."""
    in_range = []
    for idx, other in enumerate(neighbors):
        d = math.hypot(other.px - agent.px, other.py - agent.py)
        if d < params.neighbor_dist:
            in_range.append((d, idx))
    in_range.sort()
    return sorted(idx for _, idx in in_range[:params.max_neighbors])


def _orca_line(agent: WorldAgentState, other: WorldAgentState, horizon: float, params: OrcaParams,
               dt: float, responsibility: float) -> _Line:
    inv_tau = 1.0 / horizon
    rpx, rpy = other.px - agent.px, other.py - agent.py
    rvx, rvy = agent.vx - other.vx, agent.vy - other.vy
    dist_sq = rpx * rpx + rpy * rpy
    combined = agent.radius + other.radius + params.safety_margin
    combined_sq = combined * combined

    if dist_sq > combined_sq:
        wx, wy = rvx - inv_tau * rpx, rvy - inv_tau * rpy
        w_len_sq = wx * wx + wy * wy
        dot1 = wx * rpx + wy * rpy
        if dot1 < 0.0 and dot1 * dot1 > combined_sq * w_len_sq:
            # closest boundary point is on the cut-off circle
            w_len = math.sqrt(w_len_sq)
            ux_, uy_ = wx / w_len, wy / w_len
            dirx, diry = uy_, -ux_
            scale = combined * inv_tau - w_len
            ux, uy = scale * ux_, scale * uy_
        else:
            leg = math.sqrt(dist_sq - combined_sq)
            if _det(rpx, rpy, wx, wy) > 0.0:
                dirx = (rpx * leg - rpy * combined) / dist_sq
                diry = (rpx * combined + rpy * leg) / dist_sq
            else:
                dirx = -(rpx * leg + rpy * combined) / dist_sq
                diry = -(-rpx * combined + rpy * leg) / dist_sq
            dot2 = rvx * dirx + rvy * diry
            ux, uy = dot2 * dirx - rvx, dot2 * diry - rvy
    else:
        # already overlapping: resolve within one time step
        inv_dt = 1.0 / dt
        wx, wy = rvx - inv_dt * rpx, rvy - inv_dt * rpy
        w_len = math.hypot(wx, wy)
        if w_len > 0.0:
            ux_, uy_ = wx / w_len, wy / w_len
        else:
            # degenerate: move straight away from the neighbour (or along -x if coincident)
            d = math.sqrt(dist_sq)
            ux_, uy_ = (-rpx / d, -rpy / d) if d > 0.0 else (-1.0, 0.0)
        dirx, diry = uy_, -ux_
        scale = combined * inv_dt - w_len
        ux, uy = scale * ux_, scale * uy_

    return (agent.vx + responsibility * ux, agent.vy + responsibility * uy, dirx, diry)


def _lp1(lines: list[_Line], line_no: int, radius: float, opt: tuple[float, float],
         direction_opt: bool) -> Optional[tuple[float, float]]:
    px, py, dx, dy = lines[line_no]
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left, t_right = -dot - sq, -dot + sq
    for i in range(line_no):
        qx, qy, ex, ey = lines[i]
        denom = _det(dx, dy, ex, ey)
        numer = _det(ex, ey, px - qx, py - qy)
        if abs(denom) <= RVO_EPSILON:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None

    if direction_opt:
        t = t_right if opt[0] * dx + opt[1] * dy > 0.0 else t_left
    else:
        t = dx * (opt[0] - px) + dy * (opt[1] - py)
        t = min(max(t, t_left), t_right)
    return (px + t * dx, py + t * dy)


def _lp2(lines: list[_Line], radius: float, opt: tuple[float, float], direction_opt: bool,
         result: tuple[float, float]) -> tuple[int, tuple[float, float]]:
    if direction_opt:
        result = (opt[0] * radius, opt[1] * radius)
    elif opt[0] * opt[0] + opt[1] * opt[1] > radius * radius:
        n = math.hypot(*opt)
        result = (opt[0] / n * radius, opt[1] / n * radius)
    else:
        result = opt
    for i, (px, py, dx, dy) in enumerate(lines):
        if _det(dx, dy, px - result[0], py - result[1]) > 0.0:
            new = _lp1(lines, i, radius, opt, direction_opt)
            if new is None:
                return i, result
            result = new
    return len(lines), result


def _lp3(lines: list[_Line], num_hard: int, begin: int, radius: float,
         result: tuple[float, float]) -> tuple[float, float]:
    """Minimise the largest violation of the soft lines; the first ``num_hard`` stay hard."""
    distance = 0.0
    for i in range(begin, len(lines)):
        px, py, dx, dy = lines[i]
        if _det(dx, dy, px - result[0], py - result[1]) > distance:
            proj: list[_Line] = list(lines[:num_hard])
            for j in range(num_hard, i):
                qx, qy, ex, ey = lines[j]
                determinant = _det(dx, dy, ex, ey)
                if abs(determinant) <= RVO_EPSILON:
                    if dx * ex + dy * ey > 0.0:
                        continue
                    pt = (0.5 * (px + qx), 0.5 * (py + qy))
                else:
                    s = _det(ex, ey, px - qx, py - qy) / determinant
                    pt = (px + s * dx, py + s * dy)
                nx, ny = ex - dx, ey - dy
                n = math.hypot(nx, ny)
                proj.append((pt[0], pt[1], nx / n, ny / n))
            fail, candidate = _lp2(proj, radius, (-dy, dx), True, result)
            if fail >= len(proj):
                result = candidate
            distance = _det(dx, dy, px - result[0], py - result[1])
    return result


def orca_halfplanes(agent: WorldAgentState, neighbors: Sequence[WorldAgentState],
                    params: OrcaParams, dt: float,
                    responsibility: Optional[Sequence[float]] = None) -> list[HalfPlane]:
    """Constraints in solver order: non-reactive neighbours first, then the rest."""
    lines, _ = _lines(agent, neighbors, params, dt, responsibility)
    return [HalfPlane((x, y), (-dy, dx)) for x, y, dx, dy in lines]


def _lines(agent, neighbors, params, dt, responsibility) -> tuple[list[_Line], int]:
    # Neighbours that will not react (full responsibility) are treated like
    # obstacles: their constraints come first and are never relaxed.
    hard, soft = [], []
    for idx in select_neighbors(agent, neighbors, params):
        share = 0.5 if responsibility is None else responsibility[idx]
        if share >= 1.0:
            hard.append(_orca_line(agent, neighbors[idx], params.time_horizon_obst, params, dt, share))
        else:
            soft.append(_orca_line(agent, neighbors[idx], params.time_horizon, params, dt, share))
    return hard + soft, len(hard)


def solve_velocity(halfplanes: Sequence[HalfPlane], v_max: float,
                   preferred: tuple[float, float], num_hard: int = 0) -> tuple[float, float]:
    """Velocity in the speed disc closest to ``preferred`` satisfying the half-planes.

    Infeasible sets fall back to minimising the largest violation among all
    but the first ``num_hard`` constraints.
    """
    lines = [(h.point[0], h.point[1], *h.direction) for h in halfplanes]
    return _solve(lines, num_hard, v_max, preferred)


def _solve(lines: list[_Line], num_hard: int, v_max: float,
           preferred: tuple[float, float]) -> tuple[float, float]:
    fail, result = _lp2(lines, v_max, preferred, False, (0.0, 0.0))
    if fail < len(lines):
        result = _lp3(lines, num_hard, fail, v_max, result)
    return clip_speed(result[0], result[1], v_max)


def orca_velocity(agent: WorldAgentState, neighbors: Sequence[WorldAgentState],
                  params: OrcaParams, dt: float,
                  responsibility: Optional[Sequence[float]] = None) -> Action:
    """New velocity for ``agent`` given its neighbours' current states.

    ``responsibility`` gives, per neighbour, the share of the avoidance this
    agent takes on: 0.5 (the default) for reciprocating agents, 1.0 for
    neighbours that will not react.
    """
    if dt <= 0:
        raise InvalidConfigError(f"dt must be positive, got {dt}")
    lines, num_hard = _lines(agent, neighbors, params, dt, responsibility)
    vx, vy = _solve(lines, num_hard, agent.v_pref, preferred_velocity(agent, dt))
    return Action(vx, vy)


def static_human_policy(agent: WorldAgentState) -> Action:
    return Action(0.0, 0.0)
