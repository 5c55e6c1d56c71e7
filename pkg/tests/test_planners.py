import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from drivebench.chain import ChainStep, generate_chain
from drivebench.geometry import TrafficLight
from drivebench.planners import ChainOraclePlanner, IdmPlanner, LogReplayPlanner, PlannerError
from drivebench.planners.decode import DecodeParams, decode_token, nucleus
from drivebench.planners.idm import IdmParams, ballistic_step, idm_accel
from drivebench.scenario import build_scenario_state, start_index
from drivebench.synth import TEMPLATES, synth_scenario

from conftest import box_agent, ego_scene, straight_map

P = IdmParams()


def idm_reference(v, v_lead, gap, v0=15.0, s0=2.0, T=1.5, a=1.5, b=2.0, delta=4.0):
    """IDM written out longhand; the dynamic part of the desired gap is floored at zero."""
    dv = v - v_lead
    s_star = s0 + max(0.0, v * T + v * dv / (2.0 * math.sqrt(a * b)))
    return a * (1.0 - (v / v0) ** delta - (s_star / gap) ** 2)


# ---------------------------------------------------------------------------
# Car-following law


@pytest.mark.parametrize("v, v_lead, gap, expected", [
    # frozen from idm_reference: s* = 2 + 15 + 20 / (2 sqrt 3) = 22.7735, a = 1.5 (0.80247 - 0.57626)
    (10.0, 8.0, 30.0, 0.3393163),
    # closing fast on a short gap saturates at -2 b
    (10.0, 0.0, 5.0, -4.0),
    # nearly free road: 1.5 (1 - (1/15)^4 - (3.5 / 1000)^2)
    (1.0, 1.0, 1000.0, 1.4999520),
    # leader pulling away: s* stays at s0 = 2, so a 1 m gap still brakes at the floor
    (1.0, 14.0, 1.0, -4.0),
])
def test_idm_values(v, v_lead, gap, expected):
    assert idm_accel(v, v_lead, gap, P) == pytest.approx(expected, abs=1e-6)


def test_idm_free_road():
    assert idm_accel(0.0, 0.0, math.inf, P) == pytest.approx(1.5)
    assert idm_accel(15.0, 0.0, math.inf, P) == pytest.approx(0.0)
    assert idm_accel(20.0, 0.0, math.inf, P) < 0


def test_non_positive_gap_brakes_hard_and_warns(caplog):
    with caplog.at_level("WARNING"):
        assert idm_accel(5.0, 0.0, 0.0, P) == -4.0
    assert "not positive" in caplog.text


@given(st.floats(0, 20), st.floats(0, 20), st.floats(0.5, 200))
def test_idm_matches_reference_within_clamp(v, v_lead, gap):
    ref = idm_reference(v, v_lead, gap)
    assert idm_accel(v, v_lead, gap, P) == pytest.approx(min(max(ref, -4.0), 1.5), abs=1e-9)


@given(st.floats(0.5, 14.5))
def test_equilibrium_gap_separates_signs(v):
    # steady following (equal speeds): a = 0 at s_e = (s0 + v T) / sqrt(1 - (v / v0)^4)
    s_e = (2.0 + 1.5 * v) / math.sqrt(1.0 - (v / 15.0) ** 4)
    assert idm_accel(v, v, s_e * 1.05, P) > 0
    assert idm_accel(v, v, s_e * 0.95, P) < 0
    assert abs(idm_accel(v, v, s_e, P)) < 1e-9


@given(st.floats(0, 20), st.floats(0, 20), st.floats(1, 100), st.floats(0.01, 10))
def test_idm_monotone_in_gap_and_leader_speed(v, v_lead, gap, extra):
    assert idm_accel(v, v_lead, gap + extra, P) >= idm_accel(v, v_lead, gap, P) - 1e-12
    assert idm_accel(v, v_lead + extra, gap, P) >= idm_accel(v, v_lead, gap, P) - 1e-12


def test_ballistic_step_never_reverses():
    assert ballistic_step(0.0, 10.0, 1.0, 0.1) == pytest.approx((1.005, 10.1))
    assert ballistic_step(0.0, 1.0, -4.0, 1.0) == pytest.approx((0.125, 0.0))
    assert ballistic_step(3.0, 0.0, -4.0, 1.0) == (3.0, 0.0)


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        IdmParams(min_gap=0.0)


# ---------------------------------------------------------------------------
# Lane-following planner


def test_idm_planner_stops_behind_stopped_leader():
    # leader centre 30 m ahead: rear bumper at 27.6 m, ego front at 2.3 m
    scene = ego_scene([box_agent(1, 0.0, 30.0)], v=10.0)
    traj = IdmPlanner().plan(scene).trajectory
    ys = [p.y for p in traj.poses]
    assert all(b >= a - 1e-9 for a, b in zip(ys, ys[1:]))
    final_gap = (30.0 - 2.4) - (ys[-1] + 2.3)
    assert final_gap > 0
    speed_end = (ys[-1] - ys[-2]) / 0.5
    assert speed_end < 1.0


def test_idm_planner_free_road_approaches_limit():
    scene = ego_scene(v=10.0, map_ctx=straight_map(speed_limit=15.0, end=400.0))
    traj = IdmPlanner().plan(scene).trajectory
    speeds = np.diff([0.0] + [p.y for p in traj.poses]) / 0.5
    assert speeds[-1] > speeds[0]
    assert speeds.max() <= 15.0 + 1e-9


def test_idm_planner_ignores_agents_outside_lane_gate():
    beside = ego_scene([box_agent(1, 3.5, 20.0)], v=10.0)
    empty = ego_scene([], v=10.0)
    a = IdmPlanner().plan(beside).trajectory
    b = IdmPlanner().plan(empty).trajectory
    assert a.poses == b.poses


def test_idm_planner_stops_for_red():
    scene = ego_scene(v=8.0, map_ctx=straight_map(light=TrafficLight.RED, end=40.0))
    traj = IdmPlanner().plan(scene).trajectory
    assert traj.poses[-1].y + 2.3 < 40.0
    red_off = IdmPlanner(stop_at_red=False).plan(scene).trajectory
    assert red_off.poses[-1].y > traj.poses[-1].y


def test_idm_free_road_convergence_to_desired_speed():
    v, s = 0.0, 0.0
    for _ in range(1200):  # 120 s at 0.1 s
        s, v = ballistic_step(s, v, idm_accel(v, 0.0, math.inf, P), 0.1)
    assert abs(v - 15.0) < 0.15


# ---------------------------------------------------------------------------
# Decoding


def test_greedy_decode():
    rng = np.random.default_rng(0)
    assert decode_token([1.0, 3.0, 2.0], DecodeParams(temperature=0.0), rng) == 1
    assert decode_token([2.0, 2.0], DecodeParams(temperature=0.0), rng) == 0


def test_nucleus_of_equal_logits():
    keep, probs = nucleus([0.0, 0.0, 0.0, 0.0], DecodeParams(temperature=1.0, top_p=0.75))
    assert len(keep) == 3
    assert probs == pytest.approx([1 / 3] * 3)


def test_dominant_token_always_chosen():
    rng = np.random.default_rng(1)
    d = DecodeParams(temperature=1.0, top_p=0.75)
    assert {decode_token([10.0, 0.0, 0.0], d, rng) for _ in range(200)} == {0}


def test_bad_logits_rejected():
    with pytest.raises(ValueError):
        decode_token([], DecodeParams(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        decode_token([1.0, float("nan")], DecodeParams(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        DecodeParams(top_p=0.0)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8, unique=True), st.floats(0.2, 3.0), st.floats(0.05, 1.0))
def test_nucleus_matches_brute_force_prefix(logits, temperature, top_p):
    p = np.exp(np.array(logits) / temperature)
    p /= p.sum()
    order = sorted(range(len(p)), key=lambda i: -p[i])
    total, prefix = 0.0, []
    for i in order:
        prefix.append(i)
        total += p[i]
        if total >= top_p:
            break
    # skip cases where the cut sits within float noise of top_p
    sums = np.cumsum(sorted(p, reverse=True))
    assume(np.min(np.abs(sums - top_p)) > 1e-9)
    keep, probs = nucleus(logits, DecodeParams(temperature, top_p))
    assert list(keep) == prefix
    assert probs.sum() == pytest.approx(1.0)


def test_sampling_frequencies_follow_renormalized_probs():
    rng = np.random.default_rng(3)
    d = DecodeParams(temperature=1.0, top_p=0.9)
    logits = [math.log(0.5), math.log(0.3), math.log(0.15), math.log(0.05)]
    counts = np.bincount([decode_token(logits, d, rng) for _ in range(4000)], minlength=4)
    # nucleus {0, 1, 2} with mass 0.95
    assert counts[3] == 0
    assert counts[:3] / 4000 == pytest.approx(np.array([0.5, 0.3, 0.15]) / 0.95, abs=0.03)


# ---------------------------------------------------------------------------
# Model-free planners


@pytest.mark.parametrize("template", TEMPLATES)
def test_log_replay_returns_expert_future(template):
    sf = synth_scenario(template, 0)
    scene = build_scenario_state(sf, start_index(sf))
    assert LogReplayPlanner().plan(scene).trajectory is scene.expert_future


def test_log_replay_without_future_fails():
    with pytest.raises(PlannerError) as info:
        LogReplayPlanner().plan(ego_scene(scenario_id="abc"))
    assert info.value.scene_id == "abc"


def test_chain_oracle_equals_generate_chain():
    scene = ego_scene([box_agent(1, 0.0, 12.0)], v=9.0)
    steps = {ChainStep.S1, ChainStep.S2}
    res = ChainOraclePlanner(steps).plan(scene)
    assert (res.chain, res.trajectory) == generate_chain(scene, steps)
