"""Shared scene builders and the acceptance summary hook."""
from __future__ import annotations

import math

import pytest
from hypothesis import HealthCheck, settings

from drivebench.geometry import (
    AgentObject,
    EgoState,
    Frame,
    MapContext,
    Pose,
    Quad,
    ScenarioState,
    TrafficLight,
    agent_distance,
)

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

EGO_LENGTH = 4.6
EGO_WIDTH = 1.9


def straight_map(speed_limit=15.0, light=TrafficLight.GREEN, half_width=1.9, start=-20.0, end=200.0):
    """Ego-frame lane running along +Y through the origin."""
    ys = [start + 5.0 * i for i in range(int((end - start) / 5.0) + 1)]
    return MapContext(
        lane_centerline=[(0.0, y) for y in ys],
        left_boundary=[(-half_width, y) for y in ys],
        right_boundary=[(half_width, y) for y in ys],
        speed_limit=speed_limit,
        traffic_light=light,
    )


def arc_map(delta_deg: float, radius=60.0, speed_limit=15.0, straight=5.0):
    """Ego-frame lane: ``straight`` m ahead, then an arc turning by ``delta_deg`` (left positive)."""
    pts = [(0.0, -10.0), (0.0, 0.0), (0.0, straight)]
    sign = 1.0 if delta_deg >= 0 else -1.0
    total = math.radians(abs(delta_deg))
    cx = -sign * radius  # centre to the left for a left turn (left is -X)
    for i in range(1, 41):
        a = total * i / 40
        pts.append((cx + sign * radius * math.cos(a), straight + radius * math.sin(a)))
    # continue straight along the final tangent
    a = total
    tx, ty = -sign * math.sin(a), math.cos(a)
    x, y = pts[-1]
    for k in range(1, 30):
        pts.append((x + tx * 5.0 * k, y + ty * 5.0 * k))
    left = [(p[0] - 1.9, p[1]) for p in pts]
    right = [(p[0] + 1.9, p[1]) for p in pts]
    return MapContext(pts, left, right, speed_limit, TrafficLight.GREEN)


def ego_state(v=10.0, accel=0.0, past=5, dt=0.5):
    pose = Pose(0.0, 0.0, 0.0)
    hist = tuple(Pose(0.0, -v * dt * (past - 1 - i), 0.0) for i in range(past))
    return EgoState(pose, v, accel, Quad.from_pose(pose, EGO_LENGTH, EGO_WIDTH), hist)


def box_agent(agent_id, x, y, length=4.8, width=2.0, yaw=0.0, v=0.0, category="vehicle", preds=()):
    pose = Pose(x, y, yaw)
    return AgentObject(str(agent_id), category, Quad.from_pose(pose, length, width), pose, v, tuple(preds))


def ego_scene(agents=(), v=10.0, map_ctx=None, previous_plan=None, scenario_id="unit"):
    ego = ego_state(v)
    agents = sorted(agents, key=lambda a: agent_distance(ego.pose, a))
    return ScenarioState(ego, tuple(agents), map_ctx or straight_map(), None, previous_plan,
                         scenario_id=scenario_id, frame=Frame.EGO)


# ---------------------------------------------------------------------------
# Acceptance summary: one line per criterion at the end of the run

_ACCEPTANCE: list[tuple[str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _ACCEPTANCE.append((f"AC{marker.args[0]:02d}", f"{status}  {marker.args[1]}"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for tag, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{tag} {line}")
