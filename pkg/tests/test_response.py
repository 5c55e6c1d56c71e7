import pytest
from hypothesis import given
from hypothesis import strategies as st

from drivebench.chain import (
    ABLATION_SUBSETS,
    AlertLevel,
    ChainStep,
    CoarseAction,
    CollisionAlert,
    EnvAssessment,
    FinalAction,
    InstructChain,
    LightRuling,
    Maneuver,
    SpeedModifier,
    SpeedTier,
    alert_level,
    generate_chain,
)
from drivebench.geometry import Pose, Sector, Trajectory
from drivebench.response import CHAIN_UNAVAILABLE, ResponseParseError, fmt, parse_response, render_response

from conftest import box_agent, ego_scene


def _traj(n=16):
    return Trajectory(tuple(Pose(0.0, 2.5 * (k + 1), 0.0) for k in range(n)), 0.5)


TRAJ_TEXT = "Trajectory:\n" + "".join(f"(0.00, {2.5 * (k + 1):.2f}, 0.00)\n" for k in range(16))


def test_format_has_no_negative_zero():
    assert fmt(-0.001) == "0.00"
    assert fmt(-0.006) == "-0.01"
    assert fmt(2.345) in ("2.35", "2.34")


def test_rendered_response_layout():
    chain, traj = generate_chain(ego_scene([box_agent(1, 3.95, 0.0)], v=0.0))
    lines = render_response(chain, traj).splitlines()
    assert lines[:2] == ["Step 1: Coarse action", "maneuver: go-straight"]
    assert lines[2] == "Step 2: Collision forecast"
    assert lines[3] == "alert: agent=1, distance=2.00, time=0.50, sector=right, level=attention"
    assert lines[4:8] == ["Step 3: Environment", "light: proceed", "speed: safe", "boundary: clear"]
    assert lines[8:11] == ["Step 4: Final action", "maneuver: go-straight", "speed: maintain"]
    assert lines[11] == "Trajectory:"
    assert len(lines) == 12 + 16


# ---------------------------------------------------------------------------
# Round trip


alerts_st = st.lists(
    st.builds(
        lambda aid, d, t, s: CollisionAlert(str(aid), d, t, s, alert_level(d)),
        st.integers(1, 500), st.integers(0, 299).map(lambda k: k / 100), st.integers(1, 16).map(lambda k: k / 2),
        st.sampled_from(list(Sector)),
    ),
    max_size=4,
)


@st.composite
def chains(draw):
    steps = draw(st.sampled_from(ABLATION_SUBSETS + (frozenset({ChainStep.S1, ChainStep.S3, ChainStep.S4}),)))
    m = draw(st.sampled_from(list(Maneuver)))
    mod = SpeedModifier.STOP if m is Maneuver.STOP else draw(st.sampled_from(list(SpeedModifier)))
    return InstructChain(
        step1=CoarseAction(m) if ChainStep.S1 in steps else None,
        step2=tuple(draw(alerts_st)) if ChainStep.S2 in steps else None,
        step3=EnvAssessment(draw(st.sampled_from(list(LightRuling))), draw(st.sampled_from(list(SpeedTier))),
                            draw(st.booleans())) if ChainStep.S3 in steps else None,
        step4=FinalAction(m, mod) if ChainStep.S4 in steps else None,
        enabled_steps=steps,
    )


poses_st = st.lists(
    st.tuples(st.integers(-500, 500), st.integers(0, 700), st.integers(-314, 314)),
    min_size=1, max_size=16,
).map(lambda ps: Trajectory(tuple(Pose(x / 100, y / 100, yaw / 100) for x, y, yaw in ps), 0.5))


@given(chains(), poses_st)
def test_render_parse_round_trip(chain, traj):
    back_chain, back_traj = parse_response(render_response(chain, traj))
    assert back_chain == chain
    assert back_traj.poses == traj.poses


def test_none_chain_round_trips_as_unavailable():
    text = render_response(None, _traj())
    assert text.startswith(CHAIN_UNAVAILABLE + "\n")
    chain, traj = parse_response(text, 16)
    assert chain is None and len(traj) == 16


# ---------------------------------------------------------------------------
# Tolerated and rejected input


def test_trajectory_only_gives_empty_chain():
    chain, traj = parse_response(TRAJ_TEXT, 16)
    assert chain is not None and chain.is_empty
    assert traj.poses[0] == Pose(0.0, 2.5, 0.0)


def test_free_text_before_sections_is_ignored():
    chain, _ = parse_response("Sure, here is my plan.\n\n" + TRAJ_TEXT)
    assert chain.is_empty


def test_two_field_pose_line_names_the_line():
    bad = TRAJ_TEXT.replace("(0.00, 5.00, 0.00)", "(0.00, 5.00)")
    with pytest.raises(ResponseParseError) as info:
        parse_response(bad, 16)
    assert info.value.line == 3
    assert "3 fields" in str(info.value)


def test_wrong_pose_count_rejected():
    with pytest.raises(ResponseParseError, match="16 pose lines"):
        parse_response("Trajectory:\n(0.00, 1.00, 0.00)\n", 16)


def test_missing_trajectory_section():
    with pytest.raises(ResponseParseError, match="Trajectory"):
        parse_response("Step 1: Coarse action\nmaneuver: stop\n")


def test_three_decimal_numbers_rejected():
    with pytest.raises(ResponseParseError):
        parse_response("Trajectory:\n(0.000, 1.00, 0.00)\n")


def test_infeasible_jump_rejected():
    with pytest.raises(ResponseParseError, match="feasible"):
        parse_response("Trajectory:\n(0.00, 1.00, 0.00)\n(0.00, 90.00, 0.00)\n")


@pytest.mark.parametrize("chain_text", [
    "Step 7: Mystery\nfoo: bar\n",
    "Step 1: Coarse action\nmaneuver: fly\n",
    "Step 1: Coarse action\nmaneuver: stop\nStep 4: Final action\nmaneuver: stop\nspeed: maintain\n",
    "Step 2: Collision forecast\nalert: agent=1, distance=2.00, time=1.00, sector=front, level=caution\n",
    "Step 4: Final action\nmaneuver: go-straight\nspeed: maintain\n",
    "Step 3: Environment\nlight: proceed\nspeed: safe\n",
    "Step 1: Coarse action\nmaneuver: stop\nStep 1: Coarse action\nmaneuver: stop\n",
    "Step 3: Environment\nlight: proceed\nspeed: safe\nboundary: clear\nStep 1: Coarse action\nmaneuver: stop\n",
])
def test_malformed_chain_yields_none_but_keeps_trajectory(chain_text):
    chain, traj = parse_response(chain_text + TRAJ_TEXT, 16)
    assert chain is None
    assert len(traj) == 16


def test_error_carries_line_and_expectation():
    err = ResponseParseError(4, "something", "x")
    assert err.line == 4 and err.expected == "something"
    assert str(err) == "line 4: expected something, got 'x'"
