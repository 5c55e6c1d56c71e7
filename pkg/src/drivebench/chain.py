"""Rule-based four-step reasoning chain and the action-to-trajectory mapping.

The chain is the label generator: coarse maneuver from lane geometry,
collision forecast against agent footprints, an environment assessment
(signal, speed limit, lane boundaries), and a refined final action that is
then turned into a lane-following trajectory.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from shapely.geometry import LineString, Polygon

from .geometry import (
    FRONT_SECTORS,
    Frame,
    Polyline,
    Pose,
    Quad,
    ScenarioState,
    Sector,
    TrafficLight,
    Trajectory,
    heading_vector,
    min_polygon_distance,
    relative_sector,
    wrap_angle,
    yaw_of_direction,
)
from .scenario import id_sort_key


class Maneuver(str, enum.Enum):
    GO_STRAIGHT = "go-straight"
    TURN_LEFT = "turn-left"
    TURN_RIGHT = "turn-right"
    STOP = "stop"


class AlertLevel(str, enum.Enum):
    ATTENTION = "attention"
    CAUTION = "caution"


class LightRuling(str, enum.Enum):
    PROCEED = "proceed"
    PREPARE_TO_STOP = "prepare-to-stop"
    STOP = "stop"
    NOT_APPLICABLE = "not-applicable"


class SpeedTier(str, enum.Enum):
    SAFE = "safe"
    NO_ACCELERATE = "no-accelerate"
    DECELERATE = "decelerate"


class SpeedModifier(str, enum.Enum):
    ACCELERATE = "accelerate"
    MAINTAIN = "maintain"
    DECELERATE = "decelerate"
    STOP = "stop"


class ChainStep(str, enum.Enum):
    S1 = "s1"
    S2 = "s2"
    S3 = "s3"
    S4 = "s4"


ALL_STEPS = frozenset(ChainStep)
ABLATION_SUBSETS = (
    frozenset(),
    frozenset({ChainStep.S1}),
    frozenset({ChainStep.S1, ChainStep.S2}),
    frozenset({ChainStep.S1, ChainStep.S2, ChainStep.S3}),
    ALL_STEPS,
)

LIGHT_RULINGS = {
    TrafficLight.GREEN: LightRuling.PROCEED,
    TrafficLight.YELLOW: LightRuling.PREPARE_TO_STOP,
    TrafficLight.RED: LightRuling.STOP,
    TrafficLight.UNKNOWN: LightRuling.NOT_APPLICABLE,
}


@dataclass(frozen=True)
class ChainConfig:
    """Every threshold used by the rule oracle."""

    dt: float = 0.5
    horizon: float = 8.0
    turn_threshold_deg: float = 15.0
    min_lookahead: float = 10.0
    stop_margin: float = 2.0
    attention_radius: float = 3.0
    caution_radius: float = 1.5
    no_accelerate_fraction: float = 0.9
    accelerate_fraction: float = 0.8
    accel: float = 1.0
    decel: float = 2.0
    stop_decel: float = 3.0

    def __post_init__(self):
        n = self.horizon / self.dt
        if self.dt <= 0 or abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("horizon must be a positive integer multiple of dt")
        if not 0 < self.caution_radius <= self.attention_radius:
            raise ValueError("caution radius must be within (0, attention radius]")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


def parse_steps(steps: Iterable) -> frozenset[ChainStep]:
    return frozenset(ChainStep(s) for s in steps)


def validate_steps(steps: Iterable) -> frozenset[ChainStep]:
    steps = parse_steps(steps)
    if ChainStep.S4 in steps and ChainStep.S1 not in steps:
        raise ValueError("chain step s4 requires s1")
    return steps


@dataclass(frozen=True)
class CoarseAction:
    maneuver: Maneuver

    def __post_init__(self):
        object.__setattr__(self, "maneuver", Maneuver(self.maneuver))


def alert_level(distance: float, config: ChainConfig = ChainConfig()) -> Optional[AlertLevel]:
    """Half-open bands: [0, caution) -> caution, [caution, attention) -> attention."""
    if distance < config.caution_radius:
        return AlertLevel.CAUTION
    if distance < config.attention_radius:
        return AlertLevel.ATTENTION
    return None


@dataclass(frozen=True)
class CollisionAlert:
    agent_id: str
    min_distance: float
    time_offset: float
    sector: Sector
    level: AlertLevel

    def __post_init__(self):
        object.__setattr__(self, "sector", Sector(self.sector))
        object.__setattr__(self, "level", AlertLevel(self.level))
        object.__setattr__(self, "agent_id", str(self.agent_id))
        if self.min_distance < 0:
            raise ValueError("alert distance must be non-negative")
        if alert_level(self.min_distance) is not self.level:
            raise ValueError(f"alert level {self.level.value} inconsistent with distance {self.min_distance}")


@dataclass(frozen=True)
class EnvAssessment:
    light_ruling: LightRuling
    speed_tier: SpeedTier
    boundary_violation: bool

    def __post_init__(self):
        object.__setattr__(self, "light_ruling", LightRuling(self.light_ruling))
        object.__setattr__(self, "speed_tier", SpeedTier(self.speed_tier))
        object.__setattr__(self, "boundary_violation", bool(self.boundary_violation))


PERMISSIVE_ENV = EnvAssessment(LightRuling.PROCEED, SpeedTier.SAFE, False)


@dataclass(frozen=True)
class FinalAction:
    maneuver: Maneuver
    speed_modifier: SpeedModifier

    def __post_init__(self):
        object.__setattr__(self, "maneuver", Maneuver(self.maneuver))
        object.__setattr__(self, "speed_modifier", SpeedModifier(self.speed_modifier))
        if self.maneuver is Maneuver.STOP and self.speed_modifier is not SpeedModifier.STOP:
            raise ValueError("a stop maneuver requires the stop speed modifier")


FALLBACK_ACTION = FinalAction(Maneuver.GO_STRAIGHT, SpeedModifier.MAINTAIN)


@dataclass(frozen=True)
class InstructChain:
    step1: Optional[CoarseAction] = None
    step2: Optional[tuple[CollisionAlert, ...]] = None
    step3: Optional[EnvAssessment] = None
    step4: Optional[FinalAction] = None
    enabled_steps: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        steps = validate_steps(self.enabled_steps)
        object.__setattr__(self, "enabled_steps", steps)
        if self.step2 is not None:
            object.__setattr__(self, "step2", tuple(self.step2))
        present = {
            ChainStep.S1: self.step1 is not None,
            ChainStep.S2: self.step2 is not None,
            ChainStep.S3: self.step3 is not None,
            ChainStep.S4: self.step4 is not None,
        }
        for step, has in present.items():
            if has != (step in steps):
                raise ValueError(f"chain step {step.value} presence does not match enabled_steps")

    @property
    def is_empty(self) -> bool:
        return not self.enabled_steps


# ---------------------------------------------------------------------------
# Nominal ego motion


def _lane(scene: ScenarioState) -> Polyline:
    return Polyline(scene.map.lane_centerline)


def _frame(scene: ScenarioState) -> Frame:
    return scene.frame


def move_quad(quad: Quad, src: Pose, dst: Pose) -> Quad:
    """Carry ``quad`` rigidly from ``src`` to ``dst`` (same frame)."""
    dth = dst.yaw - src.yaw
    c, s = math.cos(dth), math.sin(dth)
    pts = []
    for x, y in quad.vertices:
        rx, ry = x - src.x, y - src.y
        pts.append((dst.x + c * rx - s * ry, dst.y + s * rx + c * ry))
    return Quad(tuple(pts))


def nominal_poses(scene: ScenarioState, config: ChainConfig = ChainConfig()) -> list[tuple[float, Pose]]:
    """Ego poses at ``dt, 2 dt, ...`` when following the lane at the current speed.

    The current lateral offset from the centerline is kept.
    """
    lane = _lane(scene)
    ego = scene.ego
    s0, lat = lane.project(ego.pose.position)
    out = []
    for k in range(1, config.steps + 1):
        t = k * config.dt
        x, y, tx, ty = lane.interpolate(s0 + max(ego.velocity, 0.0) * t)
        out.append((round(t, 9), Pose(x - ty * lat, y + tx * lat, yaw_of_direction(tx, ty, _frame(scene)))))
    return out


def _agent_position_at(agent, t: float) -> tuple[float, float]:
    """Nearest predicted sample in time; past the last sample, extrapolate its velocity."""
    samples = [(0.0, agent.pose.position)] + list(agent.predicted_positions)
    (t0, p0), (t1, p1) = samples[-2:] if len(samples) > 1 else (samples[0], samples[0])
    if t > t1 and t1 > t0:
        k = (t - t1) / (t1 - t0)
        return (p1[0] + k * (p1[0] - p0[0]), p1[1] + k * (p1[1] - p0[1]))
    best_t, best_p = samples[0]
    for pt, p in samples[1:]:
        if abs(pt - t) < abs(best_t - t):
            best_t, best_p = pt, p
    return best_p


# ---------------------------------------------------------------------------
# The four steps


def plan_coarse_action(scene: ScenarioState, config: ChainConfig = ChainConfig()) -> CoarseAction:
    if len(scene.map.lane_centerline) < 2:
        raise ValueError("centerline needs at least 2 points")
    lane = _lane(scene)
    s0, _ = lane.project(scene.ego.pose.position)
    reach = max(scene.ego.velocity, 0.0) * config.horizon
    if scene.map.traffic_light is TrafficLight.RED and lane.length - s0 <= reach + config.stop_margin:
        return CoarseAction(Maneuver.STOP)
    s1 = min(s0 + max(reach, config.min_lookahead), lane.length)
    delta = math.degrees(wrap_angle(lane.signed_heading(s1) - lane.signed_heading(min(s0, lane.length))))
    eps = 1e-9
    if delta >= config.turn_threshold_deg - eps:
        return CoarseAction(Maneuver.TURN_LEFT)
    if delta <= -config.turn_threshold_deg + eps:
        return CoarseAction(Maneuver.TURN_RIGHT)
    return CoarseAction(Maneuver.GO_STRAIGHT)


def forecast_collisions(scene: ScenarioState, coarse: Optional[CoarseAction] = None,
                        config: ChainConfig = ChainConfig()) -> list[CollisionAlert]:
    """Minimum footprint distance per agent along the nominal ego path.

    Distances are reported to 2 decimals and classified after rounding, so
    the printed value always agrees with the printed level.
    """
    ego = scene.ego
    path = nominal_poses(scene, config)
    ego_fps = [(t, pose, move_quad(ego.footprint, ego.pose, pose)) for t, pose in path]
    ego_r = max(math.hypot(x - ego.pose.x, y - ego.pose.y) for x, y in ego.footprint.vertices)
    alerts = []
    for agent in scene.agents:
        ax, ay = agent.pose.position
        agent_r = max(math.hypot(x - ax, y - ay) for x, y in agent.footprint.vertices)
        best = None
        for t, pose, fp in ego_fps:
            px, py = _agent_position_at(agent, t)
            if math.hypot(px - pose.x, py - pose.y) - ego_r - agent_r >= config.attention_radius + 1.0:
                continue
            afp = agent.footprint.translated(px - ax, py - ay)
            d = min_polygon_distance(fp, afp)
            if best is None or d < best[0]:
                best = (d, t, pose, afp.centroid)
        if best is None:
            continue
        d = round(best[0], 2)
        level = alert_level(d, config)
        if level is None:
            continue
        sector = relative_sector(best[2], best[3], _frame(scene))
        alerts.append(CollisionAlert(agent.id, d, round(best[1], 2), sector, level))
    alerts.sort(key=lambda a: (a.min_distance, id_sort_key(a.agent_id)))
    return alerts


def _crosses_boundary(fp: Quad, boundaries: Sequence[LineString]) -> bool:
    poly = Polygon(fp.vertices)
    return any(b.intersects(poly) for b in boundaries)


def assess_environment(scene: ScenarioState, config: ChainConfig = ChainConfig()) -> EnvAssessment:
    ruling = LIGHT_RULINGS[scene.map.traffic_light]
    v, limit = scene.ego.velocity, scene.map.speed_limit
    if v > limit:
        tier = SpeedTier.DECELERATE
    elif v >= config.no_accelerate_fraction * limit:
        tier = SpeedTier.NO_ACCELERATE
    else:
        tier = SpeedTier.SAFE
    boundaries = [LineString(scene.map.left_boundary), LineString(scene.map.right_boundary)]
    ego = scene.ego
    violation = _crosses_boundary(ego.footprint, boundaries) or any(
        _crosses_boundary(move_quad(ego.footprint, ego.pose, pose), boundaries)
        for _, pose in nominal_poses(scene, config)
    )
    return EnvAssessment(ruling, tier, violation)


def refine_action(coarse: CoarseAction, alerts: Sequence[CollisionAlert], env: EnvAssessment,
                  ego_speed: float, speed_limit: float, config: ChainConfig = ChainConfig()) -> FinalAction:
    """Combine the first three steps into a final action.

    Priority: a stop maneuver or a caution alert in front; then speeding;
    then any alert or the no-accelerate tier; then free acceleration under a
    green light; otherwise hold speed.
    """
    m = coarse.maneuver
    if m is Maneuver.STOP:
        return FinalAction(m, SpeedModifier.STOP)
    if any(a.level is AlertLevel.CAUTION and a.sector in FRONT_SECTORS for a in alerts):
        return FinalAction(m, SpeedModifier.DECELERATE)
    if env.speed_tier is SpeedTier.DECELERATE:
        return FinalAction(m, SpeedModifier.DECELERATE)
    if alerts or env.speed_tier is SpeedTier.NO_ACCELERATE:
        return FinalAction(m, SpeedModifier.MAINTAIN)
    if ego_speed < config.accelerate_fraction * speed_limit and env.light_ruling is LightRuling.PROCEED:
        return FinalAction(m, SpeedModifier.ACCELERATE)
    return FinalAction(m, SpeedModifier.MAINTAIN)


def speed_profile(v0: float, modifier: SpeedModifier, speed_limit: float, t: float,
                  config: ChainConfig = ChainConfig()) -> tuple[float, float]:
    """Arc length travelled and speed after ``t`` seconds of the given profile."""
    v0 = max(v0, 0.0)
    if modifier is SpeedModifier.MAINTAIN:
        v = min(v0, speed_limit)
        return v * t, v
    if modifier is SpeedModifier.ACCELERATE:
        v0 = min(v0, speed_limit)
        a, v_end = config.accel, speed_limit
    elif modifier is SpeedModifier.DECELERATE:
        a, v_end = -config.decel, 0.0
    else:
        a, v_end = -config.stop_decel, 0.0
    t_hit = (v_end - v0) / a if a else math.inf
    if t <= t_hit:
        return v0 * t + 0.5 * a * t * t, v0 + a * t
    return v0 * t_hit + 0.5 * a * t_hit * t_hit + v_end * (t - t_hit), v_end


def action_to_trajectory(scene: ScenarioState, action: FinalAction, config: ChainConfig = ChainConfig()) -> Trajectory:
    """Lane-following trajectory for ``action``; past the centerline end it extrapolates along the last tangent."""
    lane = _lane(scene)
    s0, _ = lane.project(scene.ego.pose.position)
    poses = []
    for k in range(1, config.steps + 1):
        ds, _ = speed_profile(scene.ego.velocity, action.speed_modifier, scene.map.speed_limit, k * config.dt, config)
        x, y, tx, ty = lane.interpolate(s0 + ds)
        poses.append(Pose(x, y, yaw_of_direction(tx, ty, _frame(scene))))
    return Trajectory(tuple(poses), config.dt)


def quantize_trajectory(traj: Trajectory, decimals: int = 2) -> Trajectory:
    return Trajectory(tuple(Pose(round(p.x, decimals), round(p.y, decimals), round(p.yaw, decimals))
                            for p in traj.poses), traj.dt)


def generate_chain(scene: ScenarioState, enabled_steps: Iterable = ALL_STEPS,
                   config: ChainConfig = ChainConfig()) -> tuple[InstructChain, Trajectory]:
    """Run the enabled chain steps and map the outcome to a trajectory.

    Without step 4 the trajectory holds the current speed along the lane.
    Output numerics are rounded to 2 decimals, matching the response text.
    """
    steps = validate_steps(enabled_steps)
    coarse = plan_coarse_action(scene, config)
    alerts = forecast_collisions(scene, coarse, config) if ChainStep.S2 in steps else []
    env = assess_environment(scene, config) if ChainStep.S3 in steps else PERMISSIVE_ENV
    if ChainStep.S4 in steps:
        final = refine_action(coarse, alerts, env, scene.ego.velocity, scene.map.speed_limit, config)
    else:
        final = FALLBACK_ACTION
    traj = quantize_trajectory(action_to_trajectory(scene, final, config))
    chain = InstructChain(
        step1=coarse if ChainStep.S1 in steps else None,
        step2=tuple(alerts) if ChainStep.S2 in steps else None,
        step3=env if ChainStep.S3 in steps else None,
        step4=final if ChainStep.S4 in steps else None,
        enabled_steps=steps,
    )
    return chain, traj
