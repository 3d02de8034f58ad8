import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from astg_nav.core import (InvalidConfigError, WorldAgentState, build_action_space,
                           from_robot_centric, to_robot_centric)


def rotation_oracle(robot, human):
    """Brute-force frame change with an explicit rotation matrix."""
    theta = math.atan2(robot.gy - robot.py, robot.gx - robot.px)
    rot = np.array([[math.cos(-theta), -math.sin(-theta)],
                    [math.sin(-theta), math.cos(-theta)]])
    p = rot @ (np.array(human.position) - np.array(robot.position))
    v = rot @ np.array(human.velocity)
    rv = rot @ np.array(robot.velocity)
    return rv, np.array([p[0], p[1], v[0], v[1], human.radius, np.linalg.norm(p),
                         human.radius + robot.radius])


def test_goal_direction_becomes_x_axis():
    robot = WorldAgentState(0, -4, 0, 1, 0.3, 0, 4)
    js = to_robot_centric(robot, [])
    assert js.robot.d_g == pytest.approx(8.0)
    assert js.robot.vx == pytest.approx(1.0)
    assert js.robot.vy == pytest.approx(0.0, abs=1e-12)
    assert js.n_humans == 0


def test_aligned_frame_leaves_positions():
    robot = WorldAgentState(0, 0, 0, 0, 0.3, 4, 0)
    human = WorldAgentState(1, 0, 0, 0, 0.3)
    h = to_robot_centric(robot, [human]).humans[0]
    assert (h.px, h.py) == (1.0, 0.0)
    assert h.dist == 1.0
    assert h.radius_sum == 0.6


def test_rotated_frame_matches_rotation_oracle():
    robot = WorldAgentState(1, 1, 0.5, 0.5, 0.3, 1, 5)
    human = WorldAgentState(1, 3, 0, -1, 0.3)
    js = to_robot_centric(robot, [human])
    rv, expected = rotation_oracle(robot, human)
    np.testing.assert_allclose(js.human_array[0], expected, atol=1e-12)
    np.testing.assert_allclose(js.robot_array[1:3], rv, atol=1e-12)
    # by hand: -90 degree rotation about the robot
    np.testing.assert_allclose(js.human_array[0], [2, 0, -1, 0, 0.3, 2, 0.6], atol=1e-12)
    np.testing.assert_allclose(js.robot_array, [4, 0.5, -0.5, 1.0, 0.3], atol=1e-12)


def test_robot_at_goal_uses_identity_frame():
    robot = WorldAgentState(2, 2, 0.3, 0.1, 0.3, 2, 2)
    human = WorldAgentState(3, 2, 0, 1, 0.3)
    js = to_robot_centric(robot, [human])
    assert js.angle == 0.0
    np.testing.assert_allclose(js.human_array[0, :4], [1, 0, 0, 1])


def test_action_space_layout():
    actions = build_action_space(1.0)
    assert len(actions) == 81
    assert actions[0].speed == 0.0
    assert max(a.speed for a in actions) == pytest.approx(1.0)
    assert all(a.speed <= 1.0 + 1e-12 for a in actions)


def test_action_speeds_follow_exponential_spacing():
    speeds = sorted({round(a.speed, 12) for a in build_action_space(1.0)} - {0.0})
    expected = [(math.exp(k / 5) - 1) / (math.e - 1) for k in range(1, 6)]
    np.testing.assert_allclose(speeds, expected, rtol=1e-10)
    np.testing.assert_allclose(speeds, [0.1289, 0.2862, 0.4785, 0.7132, 1.0], atol=5e-5)


@pytest.mark.parametrize("v_pref", [0.0, -1.0])
def test_action_space_rejects_bad_speed(v_pref):
    with pytest.raises(InvalidConfigError):
        build_action_space(v_pref)


def test_agent_invariants():
    with pytest.raises(InvalidConfigError):
        WorldAgentState(0, 0, 0, 0, 0.0)
    with pytest.raises(InvalidConfigError):
        WorldAgentState(0, 0, 0, 0, 0.3, v_pref=0.0)


coord = st.floats(-10, 10, allow_nan=False)


@st.composite
def scenes(draw):
    robot = WorldAgentState(draw(coord), draw(coord), draw(st.floats(-1, 1)), draw(st.floats(-1, 1)),
                            0.3, draw(coord), draw(coord))
    n = draw(st.integers(0, 5))
    humans = [WorldAgentState(draw(coord), draw(coord), draw(st.floats(-1, 1)), draw(st.floats(-1, 1)),
                              draw(st.floats(0.1, 0.5))) for _ in range(n)]
    return robot, humans


@settings(max_examples=200, deadline=None)
@given(scenes())
def test_round_trip_recovers_world_positions(scene):
    robot, humans = scene
    js = to_robot_centric(robot, humans)
    for h, row in zip(humans, js.human_array):
        x, y = from_robot_centric(js, row[0], row[1])
        assert abs(x - h.px) < 1e-9 and abs(y - h.py) < 1e-9
        assert abs(row[5] - math.hypot(row[0], row[1])) < 1e-9
        assert row[6] == row[4] + robot.radius


@settings(max_examples=200, deadline=None)
@given(scenes(), st.floats(-5, 5), st.floats(-5, 5), st.floats(-math.pi, math.pi))
def test_rigid_motion_equivariance(scene, tx, ty, phi):
    robot, humans = scene
    if robot.goal_distance() < 1e-3:
        return
    c, s = math.cos(phi), math.sin(phi)

    def move(a):
        return WorldAgentState(c * a.px - s * a.py + tx, s * a.px + c * a.py + ty,
                               c * a.vx - s * a.vy, s * a.vx + c * a.vy, a.radius,
                               c * a.gx - s * a.gy + tx, s * a.gx + c * a.gy + ty, a.v_pref)

    a = to_robot_centric(robot, humans)
    b = to_robot_centric(move(robot), [move(h) for h in humans])
    np.testing.assert_allclose(a.robot_array, b.robot_array, atol=1e-9)
    np.testing.assert_allclose(a.human_array, b.human_array, atol=1e-9)
