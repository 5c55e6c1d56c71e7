import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import solve_discrete_are

from drivebench.geometry import Pose, Trajectory
from drivebench.planners import IdmPlanner, LogReplayPlanner, PlannerError
from drivebench.scenario import parse_scenario, scenario_to_dict
from drivebench.simulator import (
    LqrTracker,
    Reference,
    SimConfig,
    SimLog,
    SimMode,
    VehicleState,
    run_closed_loop,
    solve_lqr_gain,
    step_kinematics,
)
from drivebench.synth import synth_scenario


# ---------------------------------------------------------------------------
# Kinematic bicycle


def test_straight_step_advances_exactly():
    s = step_kinematics(VehicleState(Pose(0, 0, 0), 10.0), 0.0, 0.0, 0.1)
    assert (s.pose.x, s.pose.y, s.pose.yaw, s.speed) == (1.0, 0.0, 0.0, 10.0)


def test_constant_steer_traces_circle():
    L, delta, v, dt = 3.0, 0.2, 5.0, 0.001
    radius = L / math.tan(delta)
    n = int(round(2 * math.pi * radius / v / dt))
    s = VehicleState(Pose(0, 0, 0), v)
    worst = 0.0
    for _ in range(n):
        s = step_kinematics(s, 0.0, delta, dt, L)
        # a left turn from the origin heading +X circles around (0, R)
        worst = max(worst, abs(math.hypot(s.pose.x, s.pose.y - radius) - radius) / radius)
    assert worst < 0.005
    # one full revolution: the wrapped heading is back at zero
    assert abs(s.pose.yaw) < 1e-2


def test_speed_never_negative():
    s = step_kinematics(VehicleState(Pose(0, 0, 0), 1.0), -4.0, 0.0, 1.0)
    assert s.speed == 0.0
    assert s.pose.x == 1.0  # position uses the speed at the start of the step


def test_first_order_convergence():
    def final(dt):
        s = VehicleState(Pose(0, 0, 0), 5.0)
        for k in range(int(round(10.0 / dt))):
            t = k * dt
            s = step_kinematics(s, 0.5 * math.sin(t), 0.2 * math.cos(0.5 * t), dt)
        return np.array([s.pose.x, s.pose.y])

    ref = final(1e-4)
    ratio = np.linalg.norm(final(0.1) - ref) / np.linalg.norm(final(0.01) - ref)
    assert 5.0 <= ratio <= 20.0


def test_state_validation():
    with pytest.raises(ValueError):
        VehicleState(Pose(0, 0, 0), -1.0)
    with pytest.raises(ValueError):
        VehicleState(Pose(0, 0, 0), 1.0, steer=0.7)
    with pytest.raises(ValueError):
        SimConfig(max_steer=0.8)
    with pytest.raises(ValueError):
        SimConfig(replan_interval=0.25)


# ---------------------------------------------------------------------------
# Riccati solver


def scalar_dare(a, b, q, r):
    """Positive root of b^2 p^2 + (r (1 - a^2) - q b^2) p - q r = 0, and its gain."""
    B = r * (1 - a * a) - q * b * b
    p = (-B + math.sqrt(B * B + 4 * b * b * q * r)) / (2 * b * b)
    return p, a * b * p / (r + b * b * p)


@pytest.mark.parametrize("a, b, q, r", [(1.0, 0.1, 1.0, 1.0), (1.2, 0.5, 1.0, 2.0), (0.9, 1.0, 3.0, 0.5)])
def test_scalar_gain_matches_closed_form(a, b, q, r):
    _, k = scalar_dare(a, b, q, r)
    assert solve_lqr_gain([[a]], [b], [[q]], [[r]])[0, 0] == pytest.approx(k, abs=1e-6)


@pytest.mark.parametrize("v", [1.0, 5.0, 15.0])
def test_matrix_gain_matches_scipy(v):
    dt, L = 0.1, 3.0
    A = np.array([[1.0, v * dt], [0.0, 1.0]])
    B = np.array([[0.0], [v * dt / L]])
    Q, R = np.diag([1.0, 0.1]), np.array([[1.0]])
    P = solve_discrete_are(A, B, Q, R)
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    assert np.allclose(solve_lqr_gain(A, B, Q, R), K, atol=1e-6)


def test_zero_state_cost_gives_zero_gain():
    assert np.allclose(solve_lqr_gain([[0.5]], [1.0], [[0.0]], [[1.0]]), 0.0)


@given(st.floats(0.1, 100))
def test_gain_invariant_to_cost_scaling(c):
    A = [[1.0, 0.1], [0.0, 1.0]]
    B = [0.0, 0.1]
    K1 = solve_lqr_gain(A, B, np.diag([1.0, 1.0]), [[1.0]])
    K2 = solve_lqr_gain(A, B, c * np.diag([1.0, 1.0]), [[c]])
    assert np.allclose(K1, K2, atol=1e-6)


# ---------------------------------------------------------------------------
# Tracker


def _straight_reference(v=10.0, n=40):
    poses = tuple(Pose(v * 0.5 * (k + 1), 0.0, 0.0) for k in range(n))
    return Reference(0.0, Pose(0, 0, 0), v, Trajectory(poses, 0.5))


def test_zero_error_gives_zero_command():
    tracker = LqrTracker(SimConfig())
    accel, steer = tracker.command(VehicleState(Pose(0, 0, 0), 10.0), _straight_reference(), 0.0)
    assert accel == pytest.approx(0.0, abs=1e-9)
    assert steer == pytest.approx(0.0, abs=1e-9)


def test_command_signs():
    tracker = LqrTracker(SimConfig())
    ref = _straight_reference()
    _, steer = tracker.command(VehicleState(Pose(0, 1.0, 0), 10.0), ref, 0.0)
    assert steer < 0  # left of the path: steer right
    slow_ref = _straight_reference(v=5.0)
    accel, _ = tracker.command(VehicleState(Pose(0, 0, 0), 10.0), slow_ref, 0.0)
    assert accel < 0


def test_lateral_offset_decays():
    cfg = SimConfig()
    tracker = LqrTracker(cfg)
    ref = _straight_reference()
    s = VehicleState(Pose(0, 1.0, 0), 10.0)
    for k in range(50):
        accel, steer = tracker.command(s, ref, k * cfg.dt)
        s = step_kinematics(s, accel, steer, cfg.dt, cfg.wheelbase)
    assert abs(s.pose.y) < 0.05


# ---------------------------------------------------------------------------
# Rollouts


@pytest.fixture(scope="module")
def replay_log():
    return run_closed_loop(synth_scenario("curved-lane", 1), LogReplayPlanner())


def test_rollout_shape(replay_log):
    assert replay_log.status == "completed"
    assert len(replay_log.records) == 151
    replans = [k for k, r in enumerate(replay_log.records) if r["replanned"]]
    assert replans == list(range(0, 150, 5))
    assert replay_log.records[-1]["t"] == pytest.approx(15.0)
    assert set(replay_log.records[0]) == {"t", "x", "y", "yaw", "v", "accel", "steer", "plan_id", "replanned",
                                          "lat_err", "heading_err", "station_err", "speed_err", "agents"}


def test_replay_tracks_expert_closely(replay_log):
    sf = synth_scenario("curved-lane", 1)
    k0 = replay_log.context["start_index"]
    worst = max(math.hypot(r["x"] - sf.frames[k0 + k].ego.x, r["y"] - sf.frames[k0 + k].ego.y)
                for k, r in enumerate(replay_log.records))
    assert worst < 0.5


def test_simlog_round_trip(tmp_path, replay_log):
    path = replay_log.save(tmp_path / "log.json")
    assert SimLog.load(path) == replay_log


def test_rollout_is_deterministic():
    sf = synth_scenario("lead-vehicle-following", 4)
    a = run_closed_loop(sf, IdmPlanner(), SimConfig(mode=SimMode.REACTIVE)).dumps()
    b = run_closed_loop(sf, IdmPlanner(), SimConfig(mode=SimMode.REACTIVE)).dumps()
    assert a == b


def test_planner_failure_is_recorded():
    class Broken:
        name = "broken"

        def plan(self, scene):
            raise PlannerError(self.name, scene.scenario_id, "boom")

    log = run_closed_loop(synth_scenario("empty-road", 0), Broken())
    assert log.status == "planner-failed"
    assert "boom" in log.message
    assert log.records == []


def test_short_scenario_rejected():
    sf = synth_scenario("empty-road", 0)
    with pytest.raises(ValueError, match="too short"):
        run_closed_loop(sf, LogReplayPlanner(), SimConfig(duration=25.0))


def _with_follower(gap=30.0):
    """Red-light approach plus a vehicle that, in the log, drives on at constant speed from behind the ego."""
    sf = synth_scenario("red-light-approach", 0)
    doc = scenario_to_dict(sf)
    e0 = sf.frames[0].ego
    c, s = math.cos(e0.yaw), math.sin(e0.yaw)
    v = e0.v
    for i, fr in enumerate(doc["frames"]):
        d = -gap + v * i * 0.1
        fr["agents"].append({"id": "50", "category": "vehicle", "x": e0.x + d * c, "y": e0.y + d * s,
                             "yaw": e0.yaw, "v": v, "length": 4.8, "width": 2.0})
    return parse_scenario(doc)


def test_logged_follower_runs_into_stopped_ego_without_reaction():
    log = run_closed_loop(_with_follower(), LogReplayPlanner(), SimConfig(mode=SimMode.NONREACTIVE))
    assert log.status == "collided"
    assert "50" in log.message


def test_reactive_follower_stops_behind_ego():
    log = run_closed_loop(_with_follower(), LogReplayPlanner(), SimConfig(mode=SimMode.REACTIVE))
    assert log.status == "completed"
    gaps = []
    for r in log.records:
        (_, ax, ay, _), = [a for a in r["agents"] if a[0] == "50"]
        gaps.append(math.hypot(r["x"] - ax, r["y"] - ay) - 0.5 * (4.6 + 4.8))
    assert min(gaps) > 0.0
    # the follower ends near the IDM standstill gap
    assert gaps[-1] == pytest.approx(2.0, abs=0.05)


def test_reactive_mode_leaves_parked_cars_alone():
    sf = synth_scenario("lead-vehicle-following", 2)
    nr = run_closed_loop(sf, LogReplayPlanner(), SimConfig(mode=SimMode.NONREACTIVE))
    r = run_closed_loop(sf, LogReplayPlanner(), SimConfig(mode=SimMode.REACTIVE))
    # the lead is a moving vehicle, so it is simulated; with nothing ahead it keeps its speed
    lead_nr = [a for a in nr.records[-1]["agents"] if a[0] == "1"][0]
    lead_r = [a for a in r.records[-1]["agents"] if a[0] == "1"][0]
    assert math.hypot(lead_nr[1] - lead_r[1], lead_nr[2] - lead_r[2]) < 1.0


def test_context_fields(replay_log):
    ctx = replay_log.context
    assert ctx["steps"] == 150 and ctx["dt"] == pytest.approx(0.1)
    assert ctx["expert_progress"] > 0
    assert (ctx["ego_length"], ctx["ego_width"]) == (4.6, 1.9)


def test_config_replace_keeps_validation():
    with pytest.raises(ValueError):
        dataclasses.replace(SimConfig(), frequency=0.0)
