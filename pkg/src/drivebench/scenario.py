"""Scenario files, feature building and category correction."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .geometry import (
    MAX_AGENTS,
    AgentObject,
    Category,
    EgoState,
    Frame,
    MapContext,
    Polyline,
    Pose,
    Quad,
    ScenarioState,
    TrafficLight,
    Trajectory,
    transform_to_ego_frame,
)

SCHEMA_VERSION = 1
LOG_DT = 0.1


class ScenarioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EgoRecord:
    x: float
    y: float
    yaw: float
    v: float
    a: float
    length: float
    width: float

    @property
    def pose(self) -> Pose:
        return Pose(self.x, self.y, self.yaw)


@dataclass(frozen=True)
class AgentRecord:
    id: str
    category: Category
    x: float
    y: float
    yaw: float
    v: float
    length: float
    width: float
    footprint: Optional[Quad] = None

    @property
    def pose(self) -> Pose:
        return Pose(self.x, self.y, self.yaw)

    def global_footprint(self) -> Quad:
        if self.footprint is not None:
            return self.footprint
        return Quad.from_pose(self.pose, self.length, self.width, Frame.GLOBAL)


@dataclass(frozen=True)
class MapRecord:
    centerline: tuple[tuple[float, float], ...]
    left_boundary: tuple[tuple[float, float], ...]
    right_boundary: tuple[tuple[float, float], ...]
    speed_limit: float
    light: TrafficLight


@dataclass(frozen=True)
class LogFrame:
    t: float
    ego: EgoRecord
    agents: tuple[AgentRecord, ...]
    map: MapRecord


@dataclass(frozen=True)
class ScenarioFile:
    schema_version: int
    metadata: Mapping[str, Any]
    frames: tuple[LogFrame, ...]

    @property
    def scenario_id(self) -> str:
        return str(self.metadata.get("scenario_id", ""))

    @property
    def tag(self) -> str:
        return str(self.metadata.get("tag", ""))

    @cached_property
    def tracks(self) -> dict[str, dict[int, AgentRecord]]:
        """Agent id -> {frame index -> record}."""
        out: dict[str, dict[int, AgentRecord]] = {}
        for i, fr in enumerate(self.frames):
            for a in fr.agents:
                out.setdefault(a.id, {})[i] = a
        return out


@dataclass(frozen=True)
class FeatureConfig:
    past_horizon: float = 2.0
    future_horizon: float = 8.0
    dt: float = 0.5
    max_agents: int = MAX_AGENTS
    category_correction: bool = False
    include_previous_plan: bool = False
    pedestrian_max_area: float = 1.0
    bicycle_max_area: float = 3.0
    map_behind: float = 10.0
    map_ahead: float = 150.0
    map_spacing: float = 5.0

    def __post_init__(self):
        decimation(self.dt)
        for name in ("past_horizon", "future_horizon"):
            ratio = getattr(self, name) / self.dt
            if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{name} must be a positive integer multiple of dt")
        if not 0 <= self.max_agents <= MAX_AGENTS:
            raise ValueError(f"max_agents must be within [0, {MAX_AGENTS}]")
        if not 0 < self.pedestrian_max_area <= self.bicycle_max_area:
            raise ValueError("category area thresholds must satisfy 0 < pedestrian <= bicycle")

    @property
    def step(self) -> int:
        return decimation(self.dt)

    @property
    def past_steps(self) -> int:
        return int(round(self.past_horizon / LOG_DT))

    @property
    def future_steps(self) -> int:
        return int(round(self.future_horizon / LOG_DT))

    @property
    def future_len(self) -> int:
        return int(round(self.future_horizon / self.dt))

    @property
    def past_len(self) -> int:
        return int(round(self.past_horizon / self.dt)) + 1


def decimation(dt: float, log_dt: float = LOG_DT) -> int:
    ratio = dt / log_dt
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9:
        raise ValueError(f"dt={dt} is not an integer multiple of {log_dt}")
    return k


# ---------------------------------------------------------------------------
# Loading / dumping


def _require(obj: Mapping, key: str, where: str):
    if not isinstance(obj, Mapping) or key not in obj:
        raise ScenarioFormatError(f"missing field {where}.{key}")
    return obj[key]


def _number(obj: Mapping, key: str, where: str) -> float:
    v = _require(obj, key, where)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScenarioFormatError(f"field {where}.{key} must be a finite number, got {v!r}")
    return float(v)


def _points(obj: Mapping, key: str, where: str) -> tuple[tuple[float, float], ...]:
    v = _require(obj, key, where)
    try:
        pts = tuple((float(p[0]), float(p[1])) for p in v if len(p) == 2)
    except (TypeError, ValueError, IndexError):
        raise ScenarioFormatError(f"field {where}.{key} must be a list of [x, y] pairs") from None
    if len(pts) != len(v) or len(pts) < 2:
        raise ScenarioFormatError(f"field {where}.{key} must be a list of at least 2 [x, y] pairs")
    return pts


_ID_RE = re.compile(r"[A-Za-z0-9_-]+")


def _parse_agent(raw: Mapping, where: str) -> AgentRecord:
    agent_id = str(_require(raw, "id", where))
    if not _ID_RE.fullmatch(agent_id):
        # ids appear verbatim in prompt lines, response lines and file names
        raise ScenarioFormatError(f"field {where}.id {agent_id!r} must match [A-Za-z0-9_-]+")
    try:
        category = Category(_require(raw, "category", where))
    except ValueError:
        raise ScenarioFormatError(f"field {where}.category has unknown value {raw['category']!r}") from None
    footprint = None
    if "footprint" in raw:
        try:
            footprint = Quad(tuple(tuple(p) for p in raw["footprint"]))
        except (ValueError, TypeError) as exc:
            raise ScenarioFormatError(f"field {where}.footprint: {exc}") from None
    rec = AgentRecord(
        id=agent_id,
        category=category,
        x=_number(raw, "x", where),
        y=_number(raw, "y", where),
        yaw=_number(raw, "yaw", where),
        v=_number(raw, "v", where),
        length=_number(raw, "length", where),
        width=_number(raw, "width", where),
        footprint=footprint,
    )
    if footprint is None and (rec.length <= 0 or rec.width <= 0):
        raise ScenarioFormatError(f"field {where}: length and width must be positive")
    return rec


def _parse_map(raw: Mapping, where: str) -> MapRecord:
    try:
        light = TrafficLight(_require(raw, "light", where))
    except ValueError:
        raise ScenarioFormatError(f"field {where}.light has unknown value {raw['light']!r}") from None
    limit = _number(raw, "speed_limit", where)
    if limit <= 0:
        raise ScenarioFormatError(f"field {where}.speed_limit must be positive")
    return MapRecord(
        centerline=_points(raw, "centerline", where),
        left_boundary=_points(raw, "left_boundary", where),
        right_boundary=_points(raw, "right_boundary", where),
        speed_limit=limit,
        light=light,
    )


def parse_scenario(doc: Mapping[str, Any]) -> ScenarioFile:
    """Validate a decoded scenario document and build a :class:`ScenarioFile`."""
    version = _require(doc, "schema_version", "scenario")
    if version != SCHEMA_VERSION:
        raise ScenarioFormatError(f"field scenario.schema_version: unsupported version {version!r}")
    metadata = _require(doc, "metadata", "scenario")
    if not isinstance(metadata, Mapping):
        raise ScenarioFormatError("field scenario.metadata must be an object")
    raw_frames = _require(doc, "frames", "scenario")
    if not isinstance(raw_frames, list) or not raw_frames:
        raise ScenarioFormatError("field scenario.frames must be a non-empty list")

    frames = []
    categories: dict[str, Category] = {}
    for i, rf in enumerate(raw_frames):
        where = f"frames[{i}]"
        t = _number(rf, "t", where)
        ego_raw = _require(rf, "ego", where)
        ew = f"{where}.ego"
        ego = EgoRecord(*(_number(ego_raw, k, ew) for k in ("x", "y", "yaw", "v", "a", "length", "width")))
        agents_raw = _require(rf, "agents", where)
        if not isinstance(agents_raw, list):
            raise ScenarioFormatError(f"field {where}.agents must be a list")
        agents = tuple(_parse_agent(a, f"{where}.agents[{j}]") for j, a in enumerate(agents_raw))
        seen = set()
        for a in agents:
            if a.id in seen:
                raise ScenarioFormatError(f"field {where}.agents: duplicate id {a.id!r}")
            seen.add(a.id)
            if categories.setdefault(a.id, a.category) != a.category:
                raise ScenarioFormatError(f"field {where}.agents: track {a.id!r} changes category")
        frames.append(LogFrame(t, ego, agents, _parse_map(_require(rf, "map", where), f"{where}.map")))

    t0 = frames[0].t
    if abs(t0 / LOG_DT - round(t0 / LOG_DT)) > 1e-6:
        raise ScenarioFormatError("field frames[0].t must be a multiple of 0.1 s")
    for i, fr in enumerate(frames):
        if abs(fr.t - (t0 + i * LOG_DT)) > 1e-6:
            raise ScenarioFormatError(f"non-uniform frame spacing at frames[{i}] (t={fr.t})")
    return ScenarioFile(SCHEMA_VERSION, dict(metadata), tuple(frames))


def load_scenario(path) -> ScenarioFile:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError(f"{path}: not valid JSON ({exc})") from None
    return parse_scenario(doc)


def scenario_to_dict(sf: ScenarioFile) -> dict:
    frames = []
    for fr in sf.frames:
        agents = []
        for a in fr.agents:
            d = {"id": a.id, "category": a.category.value, "x": a.x, "y": a.y, "yaw": a.yaw,
                 "v": a.v, "length": a.length, "width": a.width}
            if a.footprint is not None:
                d["footprint"] = [list(p) for p in a.footprint.vertices]
            agents.append(d)
        e = fr.ego
        frames.append({
            "t": fr.t,
            "ego": {"x": e.x, "y": e.y, "yaw": e.yaw, "v": e.v, "a": e.a, "length": e.length, "width": e.width},
            "agents": agents,
            "map": {
                "centerline": [list(p) for p in fr.map.centerline],
                "left_boundary": [list(p) for p in fr.map.left_boundary],
                "right_boundary": [list(p) for p in fr.map.right_boundary],
                "speed_limit": fr.map.speed_limit,
                "light": fr.map.light.value,
            },
        })
    return {"schema_version": sf.schema_version, "metadata": dict(sf.metadata), "frames": frames}


def dumps_scenario(sf: ScenarioFile) -> str:
    return json.dumps(scenario_to_dict(sf), separators=(",", ":"), sort_keys=True)


def save_scenario(sf: ScenarioFile, path) -> Path:
    path = Path(path)
    path.write_text(dumps_scenario(sf), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Feature building


def resample_track(samples: Sequence, dt: float, current_index: Optional[int] = None, log_dt: float = LOG_DT) -> list:
    """Keep every k-th sample counted from the current-time sample, k = dt / log_dt.

    ``current_index`` defaults to the last sample (a past track that ends at
    the current time). Use ``-1`` for a future track that starts one log step
    after the current time.
    """
    k = decimation(dt, log_dt)
    if current_index is None:
        current_index = len(samples) - 1
    return [s for i, s in enumerate(samples) if (i - current_index) % k == 0]


def correct_category(agent: AgentObject, pedestrian_max_area: float = 1.0, bicycle_max_area: float = 3.0) -> AgentObject:
    """Reassign ``unknown`` agents by footprint area; known categories pass through."""
    if agent.category is not Category.UNKNOWN:
        return agent
    area = agent.footprint.area
    if area < pedestrian_max_area:
        cat = Category.PEDESTRIAN
    elif area <= bicycle_max_area:
        cat = Category.BICYCLE
    else:
        cat = Category.VEHICLE
    return replace(agent, category=cat)


def id_sort_key(agent_id: str):
    return (0, int(agent_id), "") if agent_id.isdigit() else (1, 0, agent_id)


@dataclass(frozen=True)
class AgentSnapshot:
    """An agent at the planning instant plus its future positions (global frame)."""

    record: AgentRecord
    future: tuple[tuple[float, tuple[float, float]], ...] = ()


def crop_polyline(points, anchor, behind: float, ahead: float, spacing: float) -> tuple[tuple[float, float], ...]:
    line = Polyline(points)
    s0, _ = line.project(anchor)
    pts = line.resample(s0 - behind, s0 + ahead, spacing)
    return tuple((float(x), float(y)) for x, y in pts)


def assemble_scene(
    *,
    ego_pose: Pose,
    ego_velocity: float,
    ego_acceleration: float,
    ego_length: float,
    ego_width: float,
    ego_past: Sequence[Pose],
    agents: Iterable[AgentSnapshot],
    map_record: MapRecord,
    config: FeatureConfig,
    expert_future: Optional[Trajectory] = None,
    previous_plan: Optional[Trajectory] = None,
    timestamp: float = 0.0,
    scenario_id: str = "",
    wheelbase: float = 3.0,
) -> ScenarioState:
    """Build an ego-frame :class:`ScenarioState` from global-frame pieces.

    Shared by the log-driven feature builder and the closed-loop simulator.
    """
    if len(ego_past) != config.past_len:
        raise ValueError(f"ego past trajectory must have {config.past_len} poses, got {len(ego_past)}")
    objs = []
    for snap in agents:
        rec = snap.record
        fp = rec.global_footprint()
        obj = AgentObject(rec.id, rec.category, fp, rec.pose, rec.v, snap.future)
        if config.category_correction:
            obj = correct_category(obj, config.pedestrian_max_area, config.bicycle_max_area)
        cx, cy = fp.centroid
        # rounded so equal distances fall through to the id tiebreak instead of float noise
        objs.append((round(math.hypot(cx - ego_pose.x, cy - ego_pose.y), 9), id_sort_key(obj.id), obj))
    objs.sort(key=lambda t: (t[0], t[1]))
    selected = tuple(o for _, _, o in objs[: config.max_agents])

    crop = dict(anchor=ego_pose.position, behind=config.map_behind, ahead=config.map_ahead, spacing=config.map_spacing)
    mp = MapContext(
        lane_centerline=crop_polyline(map_record.centerline, **crop),
        left_boundary=crop_polyline(map_record.left_boundary, **crop),
        right_boundary=crop_polyline(map_record.right_boundary, **crop),
        speed_limit=map_record.speed_limit,
        traffic_light=map_record.light,
    )
    ego = EgoState(
        pose=ego_pose,
        velocity=float(ego_velocity),
        acceleration=float(ego_acceleration),
        footprint=Quad.from_pose(ego_pose, ego_length, ego_width, Frame.GLOBAL),
        past_trajectory=tuple(ego_past),
        wheelbase=wheelbase,
    )
    scene = ScenarioState(
        ego=ego,
        agents=selected,
        map=mp,
        expert_future=expert_future,
        previous_plan=previous_plan if config.include_previous_plan else None,
        timestamp=timestamp,
        scenario_id=scenario_id,
        frame=Frame.GLOBAL,
    )
    return transform_to_ego_frame(scene)


def frame_window(sf: ScenarioFile, frame_index: int, config: FeatureConfig) -> None:
    need_past = config.past_steps + (config.step if config.include_previous_plan else 0)
    if frame_index - need_past < 0:
        raise ValueError(f"frame {frame_index}: insufficient history ({need_past} log steps needed)")
    if frame_index + config.future_steps > len(sf.frames) - 1:
        raise ValueError(f"frame {frame_index}: insufficient future ({config.future_steps} log steps needed)")


def log_future(sf: ScenarioFile, frame_index: int, config: FeatureConfig) -> Trajectory:
    """Logged ego poses after ``frame_index`` at the feature dt (global frame)."""
    k = config.step
    poses = [sf.frames[frame_index + k * j].ego.pose for j in range(1, config.future_len + 1)]
    return Trajectory(tuple(poses), config.dt)


def agent_future(sf: ScenarioFile, agent_id: str, frame_index: int, config: FeatureConfig):
    track = sf.tracks.get(agent_id, {})
    k = config.step
    out = []
    for j in range(1, config.future_len + 1):
        rec = track.get(frame_index + k * j)
        if rec is None:
            break
        out.append((round(j * config.dt, 9), (rec.x, rec.y)))
    return tuple(out)


def build_scenario_state(sf: ScenarioFile, frame_index: int, config: FeatureConfig = FeatureConfig()) -> ScenarioState:
    frame_window(sf, frame_index, config)
    fr = sf.frames[frame_index]
    past_frames = sf.frames[frame_index - config.past_steps: frame_index + 1]
    ego_past = resample_track([f.ego.pose for f in past_frames], config.dt)
    previous_plan = None
    if config.include_previous_plan:
        previous_plan = log_future(sf, frame_index - config.step, config)
    snaps = [AgentSnapshot(a, agent_future(sf, a.id, frame_index, config)) for a in fr.agents]
    return assemble_scene(
        ego_pose=fr.ego.pose,
        ego_velocity=fr.ego.v,
        ego_acceleration=fr.ego.a,
        ego_length=fr.ego.length,
        ego_width=fr.ego.width,
        ego_past=ego_past,
        agents=snaps,
        map_record=fr.map,
        config=config,
        expert_future=log_future(sf, frame_index, config),
        previous_plan=previous_plan,
        timestamp=fr.t,
        scenario_id=sf.scenario_id,
    )


def start_index(sf: ScenarioFile, config: FeatureConfig = FeatureConfig()) -> int:
    """First frame usable for planning: metadata ``start_index`` or the past horizon."""
    return int(sf.metadata.get("start_index", config.past_steps + config.step))

