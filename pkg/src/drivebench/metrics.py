"""Open-loop trajectory errors and closed-loop rollout scores."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from shapely.geometry import Polygon

from .geometry import Frame, Polyline, Pose, Quad, Trajectory, wrap_angle


@dataclass(frozen=True)
class MetricConfig:
    miss_horizons: tuple[float, ...] = (3.0, 5.0, 8.0)
    miss_thresholds: tuple[float, ...] = (2.0, 4.0, 6.0)
    ade_cap: float = 4.0
    fde_cap: float = 6.0
    ahe_cap: float = 0.5
    fhe_cap: float = 0.8
    drivable_gate: float = 0.98
    max_abs_accel: float = 4.0
    max_abs_jerk: float = 8.0
    speed_margin: float = 0.5
    progress_slack: float = 0.5

    def __post_init__(self):
        if len(self.miss_horizons) != len(self.miss_thresholds):
            raise ValueError("miss horizons and thresholds must pair up")


@dataclass(frozen=True)
class OpenLoopReport:
    ade: float
    fde: float
    ahe: float
    fhe: float
    miss_rate: float
    ols: float


@dataclass(frozen=True)
class ClosedLoopReport:
    collision_free: bool
    drivable_compliance: float
    direction_compliance: float
    progress_ratio: float
    comfort_score: float
    speed_compliance: float
    cls: float


def _check_pair(planned: Trajectory, expert: Trajectory) -> None:
    if len(planned) != len(expert) or abs(planned.dt - expert.dt) > 1e-9:
        raise ValueError(f"trajectories differ in length or dt ({len(planned)} vs {len(expert)})")


def open_loop_errors(planned: Trajectory, expert: Trajectory) -> tuple[float, float, float, float]:
    """``(ade, fde, ahe, fhe)`` between two equally sampled trajectories."""
    _check_pair(planned, expert)
    a, b = planned.as_array(), expert.as_array()
    dist = np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1])
    head = np.array([abs(wrap_angle(float(x - y))) for x, y in zip(a[:, 2], b[:, 2])])
    return float(dist.mean()), float(dist[-1]), float(head.mean()), float(head[-1])


def is_miss(planned: Trajectory, expert: Trajectory, horizons: Sequence[float] = MetricConfig.miss_horizons,
            thresholds: Sequence[float] = MetricConfig.miss_thresholds) -> bool:
    """True when the displacement at any horizon strictly exceeds its threshold."""
    _check_pair(planned, expert)
    for h, tau in zip(horizons, thresholds):
        k = int(round(h / planned.dt)) - 1
        if k < 0 or k >= len(planned) or abs((k + 1) * planned.dt - h) > 1e-9:
            raise ValueError(f"horizon {h} s is not a trajectory time")
        if planned.poses[k].distance_to(expert.poses[k]) > tau:
            return True
    return False


def miss_rate(planned: Union[Trajectory, Sequence[Trajectory]], expert: Union[Trajectory, Sequence[Trajectory]],
              horizons: Sequence[float] = MetricConfig.miss_horizons,
              thresholds: Sequence[float] = MetricConfig.miss_thresholds) -> float:
    if isinstance(planned, Trajectory):
        planned, expert = [planned], [expert]
    if len(planned) != len(expert) or not planned:
        raise ValueError("need equally many planned and expert trajectories, at least one")
    return sum(is_miss(p, e, horizons, thresholds) for p, e in zip(planned, expert)) / len(planned)


def open_loop_report(planned: Trajectory, expert: Trajectory, config: MetricConfig = MetricConfig()) -> OpenLoopReport:
    """Errors for one scenario; ``ols`` is that scenario's score on the 0-100 scale."""
    ade, fde, ahe, fhe = open_loop_errors(planned, expert)
    miss = is_miss(planned, expert, config.miss_horizons, config.miss_thresholds)
    return OpenLoopReport(ade, fde, ahe, fhe, float(miss), 100.0 * scenario_ols(ade, fde, ahe, fhe, miss, config))


def scenario_ols(ade: float, fde: float, ahe: float, fhe: float, miss: bool, config: MetricConfig = MetricConfig()) -> float:
    if miss:
        return 0.0
    subs = [max(0.0, 1.0 - err / cap) for err, cap in
            ((ade, config.ade_cap), (fde, config.fde_cap), (ahe, config.ahe_cap), (fhe, config.fhe_cap))]
    return sum(subs) / len(subs)


def ols(reports: Sequence[OpenLoopReport]) -> float:
    """Mean per-scenario score over a scenario set (0-100)."""
    if not reports:
        raise ValueError("ols needs at least one scenario")
    return sum(r.ols for r in reports) / len(reports)


# ---------------------------------------------------------------------------
# Closed loop


def _log_dict(log) -> dict:
    return log.to_dict() if hasattr(log, "to_dict") else log


def closed_loop_score(log, config: MetricConfig = MetricConfig()) -> ClosedLoopReport:
    """Score one rollout (a ``SimLog`` or its dict form) using the context it carries.

    Steps missing after an early termination count as outside the drivable
    area. A planner failure scores 0.
    """
    d = _log_dict(log)
    ctx, recs = d["context"], d["records"]
    status = d["status"]
    if not recs:
        return ClosedLoopReport(status != "collided", 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    lane = Polyline(ctx["centerline"])
    area = Polygon(list(map(tuple, ctx["left_boundary"])) + [tuple(p) for p in reversed(ctx["right_boundary"])])
    area = area.buffer(1e-6)
    length, width, dt = ctx["ego_length"], ctx["ego_width"], ctx["dt"]
    limit = ctx["speed_limit"]

    inside = direction = comfort = speed_ok = 0
    prev_a = None
    for r in recs:
        pose = Pose(r["x"], r["y"], r["yaw"])
        fp = Quad.from_pose(pose, length, width, Frame.GLOBAL)
        inside += area.contains(Polygon(fp.vertices))
        s, _ = lane.project(pose.position)
        _, _, tx, ty = lane.interpolate(s)
        direction += r["v"] * (math.cos(r["yaw"]) * tx + math.sin(r["yaw"]) * ty) >= 0.0
        jerk = 0.0 if prev_a is None else (r["accel"] - prev_a) / dt
        prev_a = r["accel"]
        comfort += abs(r["accel"]) <= config.max_abs_accel and abs(jerk) <= config.max_abs_jerk
        speed_ok += r["v"] <= limit + config.speed_margin

    n = len(recs)
    expected = int(ctx.get("steps", n - 1)) + 1
    drivable = inside / max(n, expected)
    s0, _ = lane.project((recs[0]["x"], recs[0]["y"]))
    s1, _ = lane.project((recs[-1]["x"], recs[-1]["y"]))
    expert = ctx["expert_progress"] - config.progress_slack
    progress = 1.0 if expert <= 0 else min(max((s1 - s0) / expert, 0.0), 1.0)
    collision_free = status != "collided"
    fractions = (progress, comfort / n, speed_ok / n, direction / n)
    cls = 100.0 * float(collision_free) * float(drivable >= config.drivable_gate) * sum(fractions) / 4.0
    if status == "planner-failed":
        cls = 0.0
    return ClosedLoopReport(collision_free, drivable, direction / n, progress, comfort / n, speed_ok / n, cls)


def cls_mean(reports: Sequence[ClosedLoopReport]) -> float:
    if not reports:
        raise ValueError("need at least one rollout")
    return sum(r.cls for r in reports) / len(reports)
