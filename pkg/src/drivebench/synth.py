"""Deterministic synthetic scenarios for tests and desk-scale benchmarks.

Each template lays out one lane in a local frame (lane along +x), drives the
ego along it with a closed-form speed profile, then applies a seeded rigid
transform so scenes do not all sit at the global origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .geometry import Category, TrafficLight
from .scenario import (
    LOG_DT,
    SCHEMA_VERSION,
    AgentRecord,
    EgoRecord,
    LogFrame,
    MapRecord,
    ScenarioFile,
)

TEMPLATES = ("empty-road", "lead-vehicle-following", "red-light-approach", "crossing-pedestrian", "curved-lane")

EGO_LENGTH = 4.6
EGO_WIDTH = 1.9
START_TIME = 2.5
DURATION = 25.5


@dataclass(frozen=True)
class SynthSpec:
    template: str
    background_agents: int = 0
    duration: float = DURATION

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}; expected one of {', '.join(TEMPLATES)}")
        if self.background_agents < 0:
            raise ValueError("background_agents must be non-negative")


class _Lane:
    """Centerline made of a straight run, an optional circular arc, and another straight run."""

    def __init__(self, s_min: float, s_max: float, arc_start: float = math.inf, radius: float = 0.0,
                 turn: int = 0, arc_angle: float = math.pi / 2):
        self.s_min, self.s_max = s_min, s_max
        self.arc_start = arc_start
        self.radius = radius
        self.turn = turn
        self.arc_len = radius * arc_angle if turn else 0.0
        self.arc_angle = arc_angle

    def at(self, s: float) -> tuple[float, float, float]:
        if s <= self.arc_start or not self.turn:
            return s, 0.0, 0.0
        s1, r, d = self.arc_start, self.radius, self.turn
        if s <= s1 + self.arc_len:
            th = (s - s1) / r
            return s1 + r * math.sin(th), d * r * (1.0 - math.cos(th)), d * th
        x_end, y_end, h_end = self.at(s1 + self.arc_len)
        ds = s - s1 - self.arc_len
        return x_end + ds * math.cos(h_end), y_end + ds * math.sin(h_end), h_end

    def stations(self) -> list[float]:
        st = list(np.arange(self.s_min, min(self.s_max, self.arc_start), 10.0))
        if self.turn and self.arc_start < self.s_max:
            n = int(math.ceil(math.degrees(self.arc_angle) / 2.0))
            st += list(np.linspace(self.arc_start, self.arc_start + self.arc_len, n + 1))
            st += list(np.arange(self.arc_start + self.arc_len + 10.0, self.s_max, 10.0))
        st.append(self.s_max)
        out = []
        for s in st:
            if not out or s - out[-1] > 1e-6:
                out.append(float(s))
        return out

    def offset_points(self, offset: float) -> list[tuple[float, float]]:
        pts = []
        for s in self.stations():
            x, y, h = self.at(s)
            pts.append((x - offset * math.sin(h), y + offset * math.cos(h)))
        return pts


class _Placement:
    def __init__(self, rng: np.random.Generator):
        self.phi = float(rng.uniform(-math.pi, math.pi))
        self.tx = float(rng.uniform(-500.0, 500.0))
        self.ty = float(rng.uniform(-500.0, 500.0))
        self._c, self._s = math.cos(self.phi), math.sin(self.phi)

    def point(self, x: float, y: float) -> tuple[float, float]:
        return (self.tx + self._c * x - self._s * y, self.ty + self._s * x + self._c * y)

    def pose(self, x: float, y: float, h: float) -> tuple[float, float, float]:
        gx, gy = self.point(x, y)
        return gx, gy, math.atan2(math.sin(h + self.phi), math.cos(h + self.phi))


@dataclass
class _Motion:
    """Closed-form arc-length motion: t -> (s, v, a)."""

    fn: Callable[[float], tuple[float, float, float]]


def _constant(v: float, s0: float = 0.0) -> _Motion:
    return _Motion(lambda t: (s0 + v * (t - START_TIME), v, 0.0))


def _cosine_stop(v0: float, T: float) -> _Motion:
    """Constant ``v0`` until the start time, then a half-cosine speed ramp to rest over ``T`` seconds."""

    def fn(t):
        tau = t - START_TIME
        if tau <= 0.0:
            return v0 * tau, v0, 0.0
        if tau >= T:
            return 0.5 * v0 * T, 0.0, 0.0
        w = math.pi / T
        return (0.5 * v0 * (tau + math.sin(w * tau) / w),
                0.5 * v0 * (1.0 + math.cos(w * tau)),
                -0.5 * v0 * w * math.sin(w * tau))

    return _Motion(fn)


def _background(rng, lane: _Lane, lane_width: float, count: int, s_lo: float, s_hi: float):
    """Parked vehicles just outside both lane boundaries."""
    out = []
    if count == 0:
        return out
    per_side = (count + 1) // 2
    spacing = (s_hi - s_lo) / max(per_side, 1)
    for i in range(count):
        side = 1 if i % 2 == 0 else -1
        s = s_lo + (i // 2 + 0.5) * spacing + float(rng.uniform(-0.2, 0.2)) * spacing
        out.append((str(100 + i), s, side * (0.5 * lane_width + 2.8)))
    return out


def synth_scenario(spec: Union[str, SynthSpec], seed: int) -> ScenarioFile:
    """Generate a deterministic scenario for ``(template, seed)``."""
    if isinstance(spec, str):
        spec = SynthSpec(spec)
    template = spec.template
    rng = np.random.default_rng([int(seed), TEMPLATES.index(template), spec.background_agents])
    place = _Placement(rng)
    lane_width = float(rng.uniform(3.6, 4.0))
    n_frames = int(round(spec.duration / LOG_DT)) + 1
    times = [round(i * LOG_DT, 1) for i in range(n_frames)]
    light = TrafficLight.GREEN
    agents: list[tuple[str, Category, Callable[[float], tuple[float, float, float, float]], float, float]] = []

    if template == "empty-road":
        v = float(rng.uniform(5.0, 12.0))
        motion = _constant(v)
        lane = _Lane(-v * START_TIME - 40.0, 450.0)
        light = TrafficLight.GREEN if seed % 2 == 0 else TrafficLight.UNKNOWN
    elif template == "lead-vehicle-following":
        v = float(rng.uniform(5.0, 11.0))
        gap = float(rng.uniform(18.0, 30.0))
        motion = _constant(v)
        lane = _Lane(-v * START_TIME - 40.0, 450.0)

        def lead(t, v=v, gap=gap):
            x, y, h = lane.at(v * (t - START_TIME) + gap)
            return x, y, h, v

        agents.append(("1", Category.VEHICLE, lead, 4.8, 2.0))
    elif template == "red-light-approach":
        v = float(rng.uniform(6.0, 9.0))
        ramp = 8.0
        motion = _cosine_stop(v, ramp)
        stop_line = 0.5 * v * ramp + 0.5 * EGO_LENGTH + float(rng.uniform(1.5, 3.0))
        lane = _Lane(-v * START_TIME - 40.0, stop_line)
        light = TrafficLight.RED
    elif template == "crossing-pedestrian":
        v = float(rng.uniform(6.0, 10.0))
        walk = float(rng.uniform(1.2, 1.6))
        t_center = START_TIME + float(rng.uniform(0.5, 2.0))
        t_ego = t_center + 3.5 / walk + float(rng.uniform(1.5, 2.5))
        x_cross = 0.5 * EGO_LENGTH + v * (t_ego - START_TIME)
        motion = _constant(v)
        lane = _Lane(-v * START_TIME - 40.0, 450.0)
        category = Category.PEDESTRIAN if seed % 2 == 0 else Category.UNKNOWN

        def ped(t, walk=walk, t_center=t_center, x_cross=x_cross):
            return x_cross, walk * (t - t_center), math.pi / 2, walk

        agents.append(("2", category, ped, 0.6, 0.6))
    else:  # curved-lane
        v = float(rng.uniform(6.0, 10.0))
        radius = float(rng.uniform(40.0, 80.0))
        turn = 1 if rng.uniform() < 0.5 else -1
        motion = _constant(v)
        lane = _Lane(-v * START_TIME - 40.0, 450.0, arc_start=float(rng.uniform(10.0, 30.0)), radius=radius, turn=turn)
        light = TrafficLight.UNKNOWN

    limit = float(rng.choice([13.4, 15.0, 16.7]))
    limit = max(limit, v + 1.0)

    for name, s, lat in _background(rng, lane, lane_width, spec.background_agents, -30.0,
                                    min(lane.s_max - 5.0, 140.0)):
        def parked(t, s=s, lat=lat):
            x, y, h = lane.at(s)
            return x - lat * math.sin(h), y + lat * math.cos(h), h, 0.0

        agents.append((name, Category.VEHICLE, parked, 4.8, 2.0))

    map_rec = MapRecord(
        centerline=tuple(place.point(*p) for p in lane.offset_points(0.0)),
        left_boundary=tuple(place.point(*p) for p in lane.offset_points(0.5 * lane_width)),
        right_boundary=tuple(place.point(*p) for p in lane.offset_points(-0.5 * lane_width)),
        speed_limit=limit,
        light=light,
    )

    frames = []
    for t in times:
        s, sv, sa = motion.fn(t)
        x, y, h = lane.at(s)
        gx, gy, gyaw = place.pose(x, y, h)
        ego = EgoRecord(gx, gy, gyaw, sv, sa, EGO_LENGTH, EGO_WIDTH)
        recs = []
        for agent_id, cat, fn, length, width in agents:
            ax, ay, ah, av = fn(t)
            px, py, pyaw = place.pose(ax, ay, ah)
            recs.append(AgentRecord(agent_id, cat, px, py, pyaw, av, length, width))
        frames.append(LogFrame(t, ego, tuple(recs), map_rec))

    scenario_id = f"{template}-{int(seed):03d}"
    if spec.background_agents:
        scenario_id += f"-bg{spec.background_agents}"
    metadata = {
        "scenario_id": scenario_id,
        "tag": template,
        "seed": int(seed),
        "start_index": int(round(START_TIME / LOG_DT)),
        "lane_width": lane_width,
    }
    return ScenarioFile(SCHEMA_VERSION, metadata, tuple(frames))
