"""Intelligent driver model: the car-following law and a lane-following planner built on it."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import Polyline, Pose, ScenarioState, TrafficLight, Trajectory, yaw_of_direction
from .base import PlanResult

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 15.0
    min_gap: float = 2.0
    time_headway: float = 1.5
    max_accel: float = 1.5
    comfortable_decel: float = 2.0
    exponent: float = 4.0

    def __post_init__(self):
        for name in ("desired_speed", "min_gap", "time_headway", "max_accel", "comfortable_decel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IDM {name} must be positive")
        if self.exponent < 1:
            raise ValueError("IDM exponent must be >= 1")


def idm_accel(v: float, v_lead: float, gap: float, params: IdmParams) -> float:
    """IDM acceleration, clamped to ``[-2 b, a_max]``.

    Use ``gap = math.inf`` when there is no leader. A non-positive gap
    returns the emergency value ``-2 b`` and logs a warning.
    """
    p = params
    floor = -2.0 * p.comfortable_decel
    if gap <= 0.0:
        log.warning("IDM gap %.3f m is not positive; emergency braking", gap)
        return floor
    free = 1.0 - (v / p.desired_speed) ** p.exponent
    if math.isinf(gap):
        a = p.max_accel * free
    else:
        # the dynamic part is floored at 0 so a leader pulling away never asks for braking
        dynamic = v * p.time_headway + v * (v - v_lead) / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel))
        s_star = p.min_gap + max(dynamic, 0.0)
        a = p.max_accel * (free - (s_star / gap) ** 2)
    return min(max(a, floor), p.max_accel)


def ballistic_step(s: float, v: float, a: float, dt: float) -> tuple[float, float]:
    """Advance ``(s, v)`` under constant ``a`` without ever reversing."""
    v_new = v + a * dt
    if v_new < 0.0:
        if a < 0.0:
            return s - v * v / (2.0 * a), 0.0
        return s, 0.0
    return s + v * dt + 0.5 * a * dt * dt, v_new


@dataclass(frozen=True)
class _Lead:
    times: np.ndarray
    s: np.ndarray
    half_length: float
    leaves_at: float = math.inf

    def at(self, t: float) -> tuple[float, float]:
        """Arc-length position and along-lane speed at time ``t`` (constant speed past the last sample)."""
        ts, ss = self.times, self.s
        if t > self.leaves_at:
            return -math.inf, 0.0
        if len(ts) == 1:
            return float(ss[0]), 0.0
        i = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2))
        v = (ss[i + 1] - ss[i]) / (ts[i + 1] - ts[i])
        return float(ss[i] + v * (t - ts[i])), float(v)


def _half_extent(vertices: Sequence, center, tangent) -> float:
    cx, cy = center
    tx, ty = tangent
    return max(abs((x - cx) * tx + (y - cy) * ty) for x, y in vertices)


def idm_rollout(v0: float, s0: float, leads: Sequence[_Lead], ego_half: float, horizon: float,
                params: IdmParams, step: float = 0.1) -> list[tuple[float, float]]:
    """Integrate IDM along the lane; returns ``(s, v)`` after every ``step``.

    The leader is re-chosen every step as the nearest lead ahead of the ego.
    """
    n = int(round(horizon / step))
    s, v = s0, max(v0, 0.0)
    out = []
    for k in range(n):
        t = k * step
        gap, v_lead = math.inf, 0.0
        for lead in leads:
            ls, lv = lead.at(t)
            if ls < s:
                continue
            g = ls - s - lead.half_length - ego_half
            if g < gap:
                gap, v_lead = g, lv
        a = idm_accel(v, v_lead, gap, params)
        s, v = ballistic_step(s, v, a, step)
        out.append((s, v))
    return out


class IdmPlanner:
    """Lane-following IDM rollout against the nearest in-lane leader.

    A red light is treated as a stopped obstacle at the end of the lane.
    """

    name = "idm"

    def __init__(self, params: IdmParams = IdmParams(), follow_speed_limit: bool = True, lane_gate: float = 1.5,
                 step: float = 0.1, stop_at_red: bool = True, dt: float = 0.5, horizon: float = 8.0):
        self.params = params
        self.dt = dt
        self.horizon = horizon
        self.follow_speed_limit = follow_speed_limit
        self.lane_gate = lane_gate
        self.step = step
        self.stop_at_red = stop_at_red

    def _params(self, scene: ScenarioState) -> IdmParams:
        if not self.follow_speed_limit:
            return self.params
        return IdmParams(scene.map.speed_limit, self.params.min_gap, self.params.time_headway,
                         self.params.max_accel, self.params.comfortable_decel, self.params.exponent)

    def leads(self, scene: ScenarioState, lane: Polyline, s_ego: float) -> list[_Lead]:
        out = []
        for agent in scene.agents:
            samples = [(0.0, agent.pose.position)] + list(agent.predicted_positions)
            s0, lat = lane.project(agent.pose.position)
            if abs(lat) >= self.lane_gate or s0 <= s_ego:
                continue
            _, _, tx, ty = lane.interpolate(s0)
            half = _half_extent(agent.footprint.vertices, agent.footprint.centroid, (tx, ty))
            ts, ss = [], []
            leaves_at = math.inf
            for t, p in samples:
                s, lat_t = lane.project(p)
                if abs(lat_t) >= self.lane_gate:
                    leaves_at = ts[-1]
                    break
                ts.append(t)
                ss.append(s)
            out.append(_Lead(np.array(ts), np.array(ss), half, leaves_at))
        if self.stop_at_red and scene.map.traffic_light is TrafficLight.RED and lane.length > s_ego:
            out.append(_Lead(np.array([0.0]), np.array([lane.length]), 0.0))
        return out

    def plan(self, scene: ScenarioState) -> PlanResult:
        lane = Polyline(scene.map.lane_centerline)
        ego = scene.ego
        s_ego, _ = lane.project(ego.pose.position)
        _, _, tx, ty = lane.interpolate(s_ego)
        ego_half = _half_extent(ego.footprint.vertices, ego.pose.position, (tx, ty))
        dt = self.dt
        n = int(round(self.horizon / dt))
        states = idm_rollout(ego.velocity, s_ego, self.leads(scene, lane, s_ego), ego_half, n * dt,
                             self._params(scene), self.step)
        every = int(round(dt / self.step))
        poses = []
        for k in range(1, n + 1):
            s, _ = states[k * every - 1]
            x, y, tx, ty = lane.interpolate(s)
            poses.append(Pose(x, y, yaw_of_direction(tx, ty, scene.frame)))
        return PlanResult(trajectory=Trajectory(tuple(poses), dt))
