"""Planar geometry and the scene data model.

Two frames are used throughout the package:

* ``Frame.GLOBAL``: x east, y north, yaw counterclockwise from +X.
* ``Frame.EGO``: ego position at the origin, ego forward along +Y, +X to the
  ego's right. Yaw values are stored relative to the ego heading, so the ego
  itself reads 0 and a yaw of +pi/2 points to the ego's left (-X).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
MAX_AGENTS = 32

Point = tuple[float, float]


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]; -pi maps to +pi."""
    wrapped = math.fmod(angle + math.pi, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    wrapped -= math.pi
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


class Frame(str, enum.Enum):
    GLOBAL = "global"
    EGO = "ego"

    @property
    def yaw_offset(self) -> float:
        return 0.0 if self is Frame.GLOBAL else math.pi / 2.0


def heading_vector(yaw: float, frame: Frame = Frame.EGO) -> tuple[float, float]:
    a = yaw + frame.yaw_offset
    return math.cos(a), math.sin(a)


def yaw_of_direction(dx: float, dy: float, frame: Frame = Frame.EGO) -> float:
    return wrap_angle(math.atan2(dy, dx) - frame.yaw_offset)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError(f"non-finite pose {self.x}, {self.y}, {self.yaw}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def position(self) -> Point:
        return (self.x, self.y)

    def distance_to(self, other: "Pose") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def _signed_area(pts: Sequence[Point]) -> float:
    s = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


@dataclass(frozen=True)
class Quad:
    """Convex quadrilateral with vertices stored counterclockwise.

    Clockwise input is reversed on construction. Fewer or more than four
    vertices, zero area, or a reflex corner raise ``ValueError``.
    """

    vertices: tuple[Point, Point, Point, Point]

    def __post_init__(self):
        pts = [(float(p[0]), float(p[1])) for p in self.vertices]
        if len(pts) != 4:
            raise ValueError(f"quad needs exactly 4 vertices, got {len(pts)}")
        if not all(math.isfinite(c) for p in pts for c in p):
            raise ValueError("quad vertices must be finite")
        area = _signed_area(pts)
        if abs(area) <= 1e-12:
            raise ValueError("degenerate quad (zero area)")
        if area < 0.0:
            pts = [pts[0]] + pts[:0:-1]
        for i in range(4):
            ax, ay = pts[i]
            bx, by = pts[(i + 1) % 4]
            cx, cy = pts[(i + 2) % 4]
            cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
            if cross < -1e-12:
                raise ValueError("quad is not convex")
        object.__setattr__(self, "vertices", tuple(pts))

    @classmethod
    def from_pose(cls, pose: Pose, length: float, width: float, frame: Frame = Frame.EGO) -> "Quad":
        """Rectangle centred on ``pose``; vertex order front-left, rear-left, rear-right, front-right."""
        fx, fy = heading_vector(pose.yaw, frame)
        lx, ly = -fy, fx
        hl, hw = 0.5 * length, 0.5 * width
        cx, cy = pose.x, pose.y
        return cls((
            (cx + fx * hl + lx * hw, cy + fy * hl + ly * hw),
            (cx - fx * hl + lx * hw, cy - fy * hl + ly * hw),
            (cx - fx * hl - lx * hw, cy - fy * hl - ly * hw),
            (cx + fx * hl - lx * hw, cy + fy * hl - ly * hw),
        ))

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def centroid(self) -> Point:
        pts = self.vertices
        a = 0.0
        cx = cy = 0.0
        for i in range(4):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % 4]
            c = x0 * y1 - x1 * y0
            a += c
            cx += (x0 + x1) * c
            cy += (y0 + y1) * c
        a *= 0.5
        return (cx / (6.0 * a), cy / (6.0 * a))

    def translated(self, dx: float, dy: float) -> "Quad":
        return Quad(tuple((x + dx, y + dy) for x, y in self.vertices))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)


class Category(str, enum.Enum):
    VEHICLE = "vehicle"
    BICYCLE = "bicycle"
    PEDESTRIAN = "pedestrian"
    UNKNOWN = "unknown"


class TrafficLight(str, enum.Enum):
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"
    UNKNOWN = "unknown"


def _check_id(agent_id: str) -> str:
    agent_id = str(agent_id)
    if not agent_id or any(c.isspace() or c in ",()=;" for c in agent_id):
        raise ValueError(f"agent id {agent_id!r} must be non-empty without whitespace or ',()=;'")
    return agent_id


@dataclass(frozen=True)
class AgentObject:
    id: str
    category: Category
    footprint: Quad
    pose: Pose
    velocity: float
    predicted_positions: tuple[tuple[float, Point], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "id", _check_id(self.id))
        object.__setattr__(self, "category", Category(self.category))
        cx, cy = self.footprint.centroid
        if math.hypot(cx - self.pose.x, cy - self.pose.y) > 0.5:
            raise ValueError(f"agent {self.id}: footprint centroid is more than 0.5 m from pose")
        offsets = [t for t, _ in self.predicted_positions]
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ValueError(f"agent {self.id}: predicted positions must be strictly increasing in time")
        preds = tuple((float(t), (float(p[0]), float(p[1]))) for t, p in self.predicted_positions)
        object.__setattr__(self, "predicted_positions", preds)


@dataclass(frozen=True)
class EgoState:
    pose: Pose
    velocity: float
    acceleration: float
    footprint: Quad
    past_trajectory: tuple[Pose, ...]
    wheelbase: float = 3.0

    def __post_init__(self):
        if self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")
        object.__setattr__(self, "past_trajectory", tuple(self.past_trajectory))


def _as_polyline(points: Iterable[Sequence[float]], name: str) -> tuple[Point, ...]:
    pts = tuple((float(p[0]), float(p[1])) for p in points)
    if len(pts) < 2:
        raise ValueError(f"{name} needs at least 2 points")
    return pts


@dataclass(frozen=True)
class MapContext:
    lane_centerline: tuple[Point, ...]
    left_boundary: tuple[Point, ...]
    right_boundary: tuple[Point, ...]
    speed_limit: float
    traffic_light: TrafficLight = TrafficLight.UNKNOWN

    def __post_init__(self):
        object.__setattr__(self, "lane_centerline", _as_polyline(self.lane_centerline, "lane_centerline"))
        object.__setattr__(self, "left_boundary", _as_polyline(self.left_boundary, "left_boundary"))
        object.__setattr__(self, "right_boundary", _as_polyline(self.right_boundary, "right_boundary"))
        object.__setattr__(self, "traffic_light", TrafficLight(self.traffic_light))
        if not self.speed_limit > 0:
            raise ValueError("speed_limit must be positive")


MAX_TRAJECTORY_SPEED = 30.0


@dataclass(frozen=True)
class Trajectory:
    """Poses at ``dt``, ``dt * 2``, ... after the planning instant."""

    poses: tuple[Pose, ...]
    dt: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("trajectory needs at least one pose")
        if not self.dt > 0:
            raise ValueError("trajectory dt must be positive")
        limit = MAX_TRAJECTORY_SPEED * self.dt + 1e-9
        for i, (a, b) in enumerate(zip(self.poses, self.poses[1:])):
            if a.distance_to(b) > limit:
                raise ValueError(f"trajectory implies speed above {MAX_TRAJECTORY_SPEED} m/s between poses {i} and {i + 1}")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, len(self.poses) + 1)

    def as_array(self) -> np.ndarray:
        return np.array([[p.x, p.y, p.yaw] for p in self.poses], dtype=float)

    @classmethod
    def from_array(cls, arr, dt: float) -> "Trajectory":
        return cls(tuple(Pose(float(r[0]), float(r[1]), float(r[2])) for r in arr), dt)


@dataclass(frozen=True)
class ScenarioState:
    ego: EgoState
    agents: tuple[AgentObject, ...]
    map: MapContext
    expert_future: Optional[Trajectory]
    previous_plan: Optional[Trajectory] = None
    timestamp: float = 0.0
    scenario_id: str = ""
    frame: Frame = Frame.GLOBAL

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "frame", Frame(self.frame))
        if len(self.agents) > MAX_AGENTS:
            raise ValueError(f"at most {MAX_AGENTS} agents allowed, got {len(self.agents)}")
        dists = [agent_distance(self.ego.pose, a) for a in self.agents]
        if any(b < a - 1e-9 for a, b in zip(dists, dists[1:])):
            raise ValueError("agents must be sorted by ascending distance to ego")


def agent_distance(ego_pose: Pose, agent: AgentObject) -> float:
    cx, cy = agent.footprint.centroid
    return math.hypot(cx - ego_pose.x, cy - ego_pose.y)


# ---------------------------------------------------------------------------
# Frame transforms


class EgoFrameTransform:
    """Rigid map from the global frame into the frame of ``ego_pose``."""

    def __init__(self, ego_pose: Pose):
        self.origin = ego_pose
        self._s = math.sin(ego_pose.yaw)
        self._c = math.cos(ego_pose.yaw)

    def point(self, p: Sequence[float]) -> Point:
        dx = p[0] - self.origin.x
        dy = p[1] - self.origin.y
        return (dx * self._s - dy * self._c, dx * self._c + dy * self._s)

    def inverse_point(self, p: Sequence[float]) -> Point:
        x, y = p[0], p[1]
        return (self.origin.x + x * self._s + y * self._c, self.origin.y - x * self._c + y * self._s)

    def pose(self, pose: Pose) -> Pose:
        x, y = self.point(pose.position)
        return Pose(x, y, pose.yaw - self.origin.yaw)

    def inverse_pose(self, pose: Pose) -> Pose:
        x, y = self.inverse_point(pose.position)
        return Pose(x, y, pose.yaw + self.origin.yaw)

    def quad(self, quad: Quad) -> Quad:
        return Quad(tuple(self.point(v) for v in quad.vertices))

    def polyline(self, pts: Iterable[Sequence[float]]) -> tuple[Point, ...]:
        return tuple(self.point(p) for p in pts)

    def trajectory(self, traj: Optional[Trajectory]) -> Optional[Trajectory]:
        if traj is None:
            return None
        return Trajectory(tuple(self.pose(p) for p in traj.poses), traj.dt)

    def inverse_trajectory(self, traj: Trajectory) -> Trajectory:
        return Trajectory(tuple(self.inverse_pose(p) for p in traj.poses), traj.dt)

    def agent(self, agent: AgentObject) -> AgentObject:
        return replace(
            agent,
            footprint=self.quad(agent.footprint),
            pose=self.pose(agent.pose),
            predicted_positions=tuple((t, self.point(p)) for t, p in agent.predicted_positions),
        )


def transform_to_ego_frame(scene: ScenarioState) -> ScenarioState:
    """Re-express a global-frame scene relative to its ego.

    A scene already in the ego frame is returned unchanged.
    """
    if scene.frame is Frame.EGO:
        return scene
    tf = EgoFrameTransform(scene.ego.pose)
    ego = scene.ego
    new_ego = replace(
        ego,
        pose=tf.pose(ego.pose),
        footprint=tf.quad(ego.footprint),
        past_trajectory=tuple(tf.pose(p) for p in ego.past_trajectory),
    )
    m = scene.map
    new_map = replace(
        m,
        lane_centerline=tf.polyline(m.lane_centerline),
        left_boundary=tf.polyline(m.left_boundary),
        right_boundary=tf.polyline(m.right_boundary),
    )
    return replace(
        scene,
        ego=new_ego,
        agents=tuple(tf.agent(a) for a in scene.agents),
        map=new_map,
        expert_future=tf.trajectory(scene.expert_future),
        previous_plan=tf.trajectory(scene.previous_plan),
        frame=Frame.EGO,
    )


# ---------------------------------------------------------------------------
# Polygon distance


def _point_segment_distance(px, py, ax, ay, bx, by) -> float:
    ex, ey = bx - ax, by - ay
    denom = ex * ex + ey * ey
    if denom == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * ex + (py - ay) * ey) / denom
    if t <= 0.0:
        return math.hypot(px - ax, py - ay)
    if t >= 1.0:
        return math.hypot(px - bx, py - by)
    return math.hypot(px - (ax + t * ex), py - (ay + t * ey))


def _separated_along_edges(a: Sequence[Point], b: Sequence[Point]) -> bool:
    n = len(a)
    for i in range(n):
        ax, ay = a[i]
        bx, by = a[(i + 1) % n]
        nx, ny = by - ay, ax - bx
        pa = [x * nx + y * ny for x, y in a]
        pb = [x * nx + y * ny for x, y in b]
        if max(pa) < min(pb) or max(pb) < min(pa):
            return True
    return False


def polygons_intersect(a: Quad, b: Quad) -> bool:
    """Separating-axis test; touching counts as intersecting."""
    va, vb = a.vertices, b.vertices
    return not (_separated_along_edges(va, vb) or _separated_along_edges(vb, va))


def min_polygon_distance(a: Quad, b: Quad) -> float:
    if polygons_intersect(a, b):
        return 0.0
    va, vb = a.vertices, b.vertices
    best = math.inf
    for poly_pts, poly_edges in ((va, vb), (vb, va)):
        for px, py in poly_pts:
            for i in range(4):
                ax, ay = poly_edges[i]
                bx, by = poly_edges[(i + 1) % 4]
                d = _point_segment_distance(px, py, ax, ay, bx, by)
                if d < best:
                    best = d
    return best


# ---------------------------------------------------------------------------
# Sectors


class Sector(str, enum.Enum):
    FRONT = "front"
    LEFT_FRONT = "left-front"
    LEFT = "left"
    LEFT_REAR = "left-rear"
    REAR = "rear"
    RIGHT_REAR = "right-rear"
    RIGHT = "right"
    RIGHT_FRONT = "right-front"


FRONT_SECTORS = frozenset({Sector.FRONT, Sector.LEFT_FRONT, Sector.RIGHT_FRONT})

_LEFT_SECTORS = (Sector.FRONT, Sector.LEFT_FRONT, Sector.LEFT, Sector.LEFT_REAR, Sector.REAR)
_RIGHT_SECTORS = (Sector.FRONT, Sector.RIGHT_FRONT, Sector.RIGHT, Sector.RIGHT_REAR, Sector.REAR)


def bearing_deg(ego_pose: Pose, point: Sequence[float], frame: Frame = Frame.EGO) -> float:
    """Bearing of ``point`` from the ego heading in degrees; positive to the left."""
    fx, fy = heading_vector(ego_pose.yaw, frame)
    dx, dy = point[0] - ego_pose.x, point[1] - ego_pose.y
    return math.degrees(math.atan2(fx * dy - fy * dx, fx * dx + fy * dy))


def relative_sector(ego_pose: Pose, point: Sequence[float], frame: Frame = Frame.EGO) -> Sector:
    """Octant of ``point`` around the ego; boundaries go to the more frontal octant."""
    if point[0] == ego_pose.x and point[1] == ego_pose.y:
        return Sector.FRONT
    b = bearing_deg(ego_pose, point, frame)
    side = _LEFT_SECTORS if b >= 0.0 else _RIGHT_SECTORS
    mag = abs(b)
    for i, upper in enumerate((22.5, 67.5, 112.5, 157.5)):
        if mag <= upper:
            return side[i]
    return Sector.REAR


# ---------------------------------------------------------------------------
# Polylines


@dataclass(frozen=True, eq=False)
class Polyline:
    """Arc-length parametrised polyline; queries past either end extrapolate along the end tangents."""

    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(pts) >= 2:
            keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9])
            pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 distinct points")
        seg = np.diff(pts, axis=0)
        seglen = np.linalg.norm(seg, axis=1)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_seglen", seglen)
        object.__setattr__(self, "_tangent", seg / seglen[:, None])
        object.__setattr__(self, "_s", np.concatenate([[0.0], np.cumsum(seglen)]))

    @property
    def length(self) -> float:
        return float(self._s[-1])

    @property
    def stations(self) -> np.ndarray:
        return self._s

    def _segment(self, s: float) -> int:
        i = int(np.searchsorted(self._s, s, side="right")) - 1
        return min(max(i, 0), len(self._seglen) - 1)

    def interpolate(self, s: float) -> tuple[float, float, float, float]:
        """Point and unit tangent ``(x, y, tx, ty)`` at arc length ``s``."""
        i = self._segment(s)
        tx, ty = self._tangent[i]
        ds = s - self._s[i]
        x0, y0 = self.points[i]
        return (float(x0 + tx * ds), float(y0 + ty * ds), float(tx), float(ty))

    def project(self, p: Sequence[float]) -> tuple[float, float]:
        """Arc length of the closest point and signed lateral offset (positive to the left)."""
        pts = self.points
        rel = np.asarray(p, dtype=float) - pts[:-1]
        t = np.einsum("ij,ij->i", rel, self._tangent)
        t_clip = np.clip(t, 0.0, self._seglen)
        foot = pts[:-1] + self._tangent * t_clip[:, None]
        d = np.linalg.norm(np.asarray(p, dtype=float) - foot, axis=1)
        i = int(np.argmin(d))
        s = self._s[i] + t_clip[i]
        # extrapolate beyond the ends
        if i == 0 and t[0] < 0.0:
            s = t[0]
        elif i == len(self._seglen) - 1 and t[i] > self._seglen[i]:
            s = self._s[i] + t[i]
        x, y, tx, ty = self.interpolate(float(s))
        lat = tx * (p[1] - y) - ty * (p[0] - x)
        return float(s), float(lat)

    def resample(self, s0: float, s1: float, spacing: float) -> np.ndarray:
        """Points from ``s0`` to ``s1`` (both included) at ``spacing``, clipped to the polyline."""
        s0 = max(s0, 0.0)
        s1 = min(s1, self.length)
        if s1 - s0 < 1e-9:
            s1 = min(self.length, s0 + spacing)
            s0 = max(0.0, s1 - spacing)
        n = max(int(math.ceil((s1 - s0) / spacing - 1e-9)), 1)
        stations = np.linspace(s0, s1, n + 1)
        return np.array([self.interpolate(float(s))[:2] for s in stations])

    def signed_heading(self, s: float) -> float:
        """Tangent angle (global-style atan2) at arc length ``s``."""
        _, _, tx, ty = self.interpolate(s)
        return math.atan2(ty, tx)
