"""Closed-loop rollouts: kinematic bicycle, LQR tracking, and background agents."""
from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from shapely.geometry import Polygon

from .geometry import (
    EgoFrameTransform,
    Frame,
    Polyline,
    Pose,
    Quad,
    Trajectory,
    min_polygon_distance,
    wrap_angle,
)
from .planners.base import Planner
from .planners.idm import IdmParams, ballistic_step, idm_accel
from .scenario import (
    LOG_DT,
    AgentRecord,
    AgentSnapshot,
    FeatureConfig,
    ScenarioFile,
    agent_future,
    assemble_scene,
    log_future,
    resample_track,
    start_index,
)


MAX_STEER = 0.6


class SimMode(str, enum.Enum):
    NONREACTIVE = "nonreactive"
    REACTIVE = "reactive"


class SimStatus(str, enum.Enum):
    COMPLETED = "completed"
    COLLIDED = "collided"
    OFF_ROAD = "off-road"
    PLANNER_FAILED = "planner-failed"


@dataclass(frozen=True)
class SimConfig:
    duration: float = 15.0
    frequency: float = 10.0
    replan_interval: float = 0.5
    mode: SimMode = SimMode.NONREACTIVE
    wheelbase: float = 3.0
    max_steer: float = 0.6
    max_accel: float = 4.0
    lateral_q: tuple[float, float] = (1.0, 0.1)
    lateral_r: float = 1.0
    longitudinal_q: tuple[float, float] = (1.0, 1.0)
    longitudinal_r: float = 1.0
    resolve_speed_change: float = 1.0
    agent_lane_gate: float = 1.5
    agent_idm: IdmParams = IdmParams()

    def __post_init__(self):
        object.__setattr__(self, "mode", SimMode(self.mode))
        steps = self.duration * self.frequency
        if self.duration <= 0 or self.frequency <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ValueError("duration * frequency must be a positive integer")
        ratio = self.replan_interval * self.frequency
        if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("replan_interval must be a positive multiple of 1 / frequency")
        if self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")
        if not 0 < self.max_steer <= MAX_STEER or self.max_accel <= 0:
            raise ValueError(f"actuator limits must satisfy 0 < max_steer <= {MAX_STEER} and max_accel > 0")

    @property
    def dt(self) -> float:
        return 1.0 / self.frequency

    @property
    def steps(self) -> int:
        return int(round(self.duration * self.frequency))

    @property
    def replan_steps(self) -> int:
        return int(round(self.replan_interval * self.frequency))


@dataclass(frozen=True)
class VehicleState:
    """Ego state in the global frame (yaw counterclockwise from +X)."""

    pose: Pose
    speed: float
    accel: float = 0.0
    steer: float = 0.0

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if abs(self.steer) > MAX_STEER + 1e-12:
            raise ValueError(f"steer exceeds {MAX_STEER} rad")


def step_kinematics(state: VehicleState, accel: float, steer: float, dt: float, wheelbase: float = 3.0) -> VehicleState:
    """Explicit Euler step of the kinematic bicycle (positions use the speed at the start of the step)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    p, v = state.pose, state.speed
    x = p.x + v * math.cos(p.yaw) * dt
    y = p.y + v * math.sin(p.yaw) * dt
    yaw = p.yaw + v * math.tan(steer) / wheelbase * dt
    return VehicleState(Pose(x, y, yaw), max(0.0, v + accel * dt), accel, steer)


class LqrConvergenceError(RuntimeError):
    pass


def solve_lqr_gain(A, B, Q, R, tol: float = 1e-10, max_iter: int = 10000) -> np.ndarray:
    """Steady-state discrete LQR gain ``K`` (``u = -K x``) by Riccati fixed-point iteration."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
        if np.max(np.abs(P_next - P)) < tol:
            P = P_next
            return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = P_next
    raise LqrConvergenceError(f"Riccati iteration did not converge within {max_iter} iterations")


class Reference:
    """Time-stamped global reference built from a plan.

    Sample 0 is the ego pose at plan time; the rest are the planned poses.
    Along-track targets interpolate linearly in time and hold the last pose
    past the end. Lateral and heading errors use the nearest point on the
    forward-progressing part of the path.
    """

    def __init__(self, t0: float, start: Pose, v0: float, traj_global: Trajectory):
        poses = [start] + list(traj_global.poses)
        n = len(poses)
        self.times = t0 + traj_global.dt * np.arange(n)
        self.xy = np.array([[p.x, p.y] for p in poses])
        self.yaw = np.unwrap([p.yaw for p in poses])
        heading = np.stack([np.cos(self.yaw), np.sin(self.yaw)], axis=1)
        v = np.empty(n)
        v[0] = max(v0, 0.0)
        for i in range(1, n):
            lo, hi = i - 1, min(i + 1, n - 1)
            v[i] = max(0.0, float((self.xy[hi] - self.xy[lo]) @ heading[i]) / (self.times[hi] - self.times[lo]))
        self.v = v
        self.a = np.gradient(v, self.times)

        keep = [0]
        for i in range(1, n):
            d = self.xy[i] - self.xy[keep[-1]]
            if np.linalg.norm(d) > 1e-6 and float(d @ heading[keep[-1]]) > 0.0:
                keep.append(i)
        self.path = Polyline(self.xy[keep]) if len(keep) >= 2 else None
        if self.path is not None:
            st = self.path.stations
            self._path_yaw = self.yaw[keep]
            kseg = np.diff(self._path_yaw) / np.diff(st)
            self._path_kappa = np.concatenate([[kseg[0]], 0.5 * (kseg[1:] + kseg[:-1]), [kseg[-1]]])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def target(self, t: float) -> tuple[np.ndarray, float, float, float]:
        """Reference point, yaw, speed and acceleration at time ``t``."""
        if t >= self.times[-1]:
            return self.xy[-1], float(self.yaw[-1]), 0.0, 0.0
        x = np.interp(t, self.times, self.xy[:, 0])
        y = np.interp(t, self.times, self.xy[:, 1])
        return (np.array([x, y]), float(np.interp(t, self.times, self.yaw)),
                float(np.interp(t, self.times, self.v)), float(np.interp(t, self.times, self.a)))

    def locate(self, x: float, y: float) -> tuple[float, float, float]:
        """Lateral offset (left positive), path yaw and curvature at the nearest path point."""
        if self.path is None:
            return 0.0, float(self.yaw[-1]), 0.0
        s, lat = self.path.project((x, y))
        st = self.path.stations
        return lat, float(np.interp(s, st, self._path_yaw)), float(np.interp(s, st, self._path_kappa))


class LqrTracker:
    """Lateral LQR on (lateral error, heading error) and longitudinal LQR on (station error, speed error)."""

    def __init__(self, config: SimConfig = SimConfig()):
        self.config = config
        dt = config.dt
        self.k_long = solve_lqr_gain([[1.0, dt], [0.0, 1.0]], [0.0, dt], np.diag(config.longitudinal_q),
                                     [[config.longitudinal_r]])[0]
        self._v_solved: Optional[float] = None
        self.k_lat = np.zeros(2)

    def lateral_gain(self, v: float) -> np.ndarray:
        if self._v_solved is None or abs(v - self._v_solved) > self.config.resolve_speed_change:
            c = self.config
            v_lin = max(v, 1.0)
            A = [[1.0, v_lin * c.dt], [0.0, 1.0]]
            B = [0.0, v_lin * c.dt / c.wheelbase]
            self.k_lat = solve_lqr_gain(A, B, np.diag(c.lateral_q), [[c.lateral_r]])[0]
            self._v_solved = v
        return self.k_lat

    def errors(self, state: VehicleState, ref: Reference, t: float) -> tuple[float, float, float, float, float, float]:
        """Station, speed, lateral and heading errors plus the feedforward acceleration and curvature."""
        lat, path_yaw, kappa = ref.locate(state.pose.x, state.pose.y)
        point, yaw_ref, v_ref, a_ref = ref.target(t)
        dx, dy = state.pose.x - point[0], state.pose.y - point[1]
        s_err = dx * math.cos(yaw_ref) + dy * math.sin(yaw_ref)
        head = wrap_angle(state.pose.yaw - path_yaw)
        return s_err, state.speed - v_ref, lat, head, a_ref, kappa

    def command(self, state: VehicleState, ref: Reference, t: float) -> tuple[float, float]:
        c = self.config
        s_err, v_err, lat, head, a_ref, kappa = self.errors(state, ref, t)
        accel = a_ref - float(self.k_long @ np.array([s_err, v_err]))
        k = self.lateral_gain(state.speed)
        steer = math.atan(c.wheelbase * kappa) - float(k @ np.array([lat, head]))
        accel = min(max(accel, -c.max_accel), c.max_accel)
        steer = min(max(steer, -c.max_steer), c.max_steer)
        return accel, steer


def track_trajectory(state: VehicleState, reference: Reference, t: float, tracker: LqrTracker) -> tuple[float, float]:
    return tracker.command(state, reference, t)


# ---------------------------------------------------------------------------
# Background agents


@dataclass
class _ReactiveAgent:
    record: AgentRecord
    path: Polyline
    s: float
    v: float
    v0: float

    def pose(self) -> Pose:
        x, y, tx, ty = self.path.interpolate(self.s)
        return Pose(x, y, math.atan2(ty, tx))


def _moving_vehicle_paths(sf: ScenarioFile, k0: int) -> dict[str, tuple[Polyline, float]]:
    out = {}
    for agent_id, track in sf.tracks.items():
        recs = [track[i] for i in sorted(track)]
        if k0 not in track or recs[0].category.value != "vehicle":
            continue
        vmax = max(r.v for r in recs)
        pts = np.array([[r.x, r.y] for r in recs])
        if vmax < 0.1 or np.linalg.norm(pts[-1] - pts[0]) < 0.5:
            continue
        try:
            out[agent_id] = (Polyline(pts), vmax)
        except ValueError:
            continue
    return out


def _step_reactive(agents: dict[str, _ReactiveAgent], ego: VehicleState, ego_length: float,
                   others: list[AgentRecord], config: SimConfig) -> None:
    """One IDM step for every reactive agent; the ego counts as a potential leader."""
    dt = config.dt
    snapshot = {aid: (a.pose(), a.v, 0.5 * a.record.length) for aid, a in agents.items()}
    objects = [(aid, pose, v, half) for aid, (pose, v, half) in snapshot.items()]
    objects += [("__ego__", ego.pose, ego.speed, 0.5 * ego_length)]
    objects += [(r.id, r.pose, r.v, 0.5 * r.length) for r in others]
    updates = {}
    for aid, agent in agents.items():
        half = 0.5 * agent.record.length
        gap, v_lead = math.inf, 0.0
        for oid, pose, v, ohalf in objects:
            if oid == aid:
                continue
            s_o, lat = agent.path.project(pose.position)
            if abs(lat) >= config.agent_lane_gate or s_o <= agent.s:
                continue
            g = s_o - agent.s - half - ohalf
            if g < gap:
                _, _, tx, ty = agent.path.interpolate(s_o)
                gap, v_lead = g, v * (math.cos(pose.yaw) * tx + math.sin(pose.yaw) * ty)
        p = config.agent_idm
        params = IdmParams(agent.v0, p.min_gap, p.time_headway, p.max_accel, p.comfortable_decel, p.exponent)
        a = idm_accel(agent.v, v_lead, gap, params)
        updates[aid] = ballistic_step(agent.s, agent.v, a, dt)
    for aid, (s, v) in updates.items():
        agents[aid].s, agents[aid].v = s, v


# ---------------------------------------------------------------------------
# Rollout


@dataclass
class SimLog:
    scenario_id: str
    planner: str
    mode: str
    status: str
    records: list = field(default_factory=list)
    context: dict = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "planner": self.planner,
            "mode": self.mode,
            "status": self.status,
            "message": self.message,
            "context": self.context,
            "records": self.records,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimLog":
        return cls(d["scenario_id"], d["planner"], d["mode"], d["status"], d["records"], d["context"], d.get("message", ""))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "SimLog":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def lane_polygon(left, right) -> Polygon:
    return Polygon(list(left) + list(reversed(list(right))))


def _agent_quad(rec: AgentRecord, pose: Optional[Pose] = None) -> Quad:
    if pose is None:
        return rec.global_footprint()
    return Quad.from_pose(pose, rec.length, rec.width, Frame.GLOBAL)


def _constant_velocity_future(pose: Pose, v: float, config: FeatureConfig):
    return tuple(
        (round(j * config.dt, 9), (pose.x + v * math.cos(pose.yaw) * j * config.dt,
                                   pose.y + v * math.sin(pose.yaw) * j * config.dt))
        for j in range(1, config.future_len + 1)
    )


def run_closed_loop(sf: ScenarioFile, planner: Planner, config: SimConfig = SimConfig(),
                    features: FeatureConfig = FeatureConfig()) -> SimLog:
    """Roll the planner out against the scenario for ``config.duration`` seconds."""
    k0 = start_index(sf, features)
    n = config.steps
    log_step = int(round(config.dt / LOG_DT))
    if abs(config.dt - log_step * LOG_DT) > 1e-9:
        raise ValueError("simulation step must be a multiple of the log step")
    last_frame = k0 + n * log_step + features.future_steps
    if last_frame > len(sf.frames) - 1 or k0 - features.past_steps - features.step < 0:
        raise ValueError(f"scenario {sf.scenario_id} is too short for a {config.duration} s rollout from frame {k0}")

    first = sf.frames[k0]
    ego_len, ego_wid = first.ego.length, first.ego.width
    map_rec = first.map
    lane = Polyline(map_rec.centerline)
    lane_poly = lane_polygon(map_rec.left_boundary, map_rec.right_boundary)
    expert_start, _ = lane.project(first.ego.pose.position)
    expert_end, _ = lane.project(sf.frames[k0 + n * log_step].ego.pose.position)

    state = VehicleState(first.ego.pose, max(first.ego.v, 0.0), first.ego.a, 0.0)
    hist_len = int(round(features.past_horizon / config.dt)) + 1
    history = deque((sf.frames[k0 - log_step * (hist_len - 1 - i)].ego.pose for i in range(hist_len)), maxlen=hist_len)
    tracker = LqrTracker(config)
    previous_plan = log_future(sf, k0 - features.step, features)

    reactive: dict[str, _ReactiveAgent] = {}
    if config.mode is SimMode.REACTIVE:
        for aid, (path, vmax) in _moving_vehicle_paths(sf, k0).items():
            rec = sf.tracks[aid][k0]
            s, _ = path.project(rec.pose.position)
            reactive[aid] = _ReactiveAgent(rec, path, s, max(rec.v, 0.0), vmax)

    dims = {}
    records = []
    status = SimStatus.COMPLETED
    message = ""
    reference: Optional[Reference] = None
    plan_id = -1
    for k in range(n + 1):
        t = k * config.dt
        frame_idx = k0 + k * log_step
        frame = sf.frames[frame_idx]
        replayed = [a for a in frame.agents if a.id not in reactive]
        agent_states = [(a, None) for a in replayed] + [(r.record, r.pose()) for r in reactive.values()]
        for rec, _ in agent_states:
            dims[rec.id] = [rec.length, rec.width]

        ego_fp = Quad.from_pose(state.pose, ego_len, ego_wid, Frame.GLOBAL)
        collided_with = None
        for rec, pose in agent_states:
            ap = pose or rec.pose
            if math.hypot(ap.x - state.pose.x, ap.y - state.pose.y) > 0.5 * (math.hypot(ego_len, ego_wid)
                                                                            + math.hypot(rec.length, rec.width)) + 1e-6:
                continue
            if min_polygon_distance(ego_fp, _agent_quad(rec, pose)) == 0.0:
                collided_with = rec.id
                break
        off_road = not lane_poly.intersects(Polygon(ego_fp.vertices))

        replanned = False
        if collided_with is None and not off_road and k < n and k % config.replan_steps == 0:
            snaps = []
            for rec, pose in agent_states:
                if pose is None:
                    fut = agent_future(sf, rec.id, frame_idx, features)
                    snaps.append(AgentSnapshot(rec, fut))
                else:
                    moved = AgentRecord(rec.id, rec.category, pose.x, pose.y, pose.yaw, reactive[rec.id].v,
                                        rec.length, rec.width)
                    snaps.append(AgentSnapshot(moved, _constant_velocity_future(pose, moved.v, features)))
            past = resample_track(list(history), features.dt, log_dt=config.dt)
            try:
                scene = assemble_scene(
                    ego_pose=state.pose, ego_velocity=state.speed, ego_acceleration=state.accel,
                    ego_length=ego_len, ego_width=ego_wid, ego_past=past, agents=snaps, map_record=frame.map,
                    config=features, expert_future=log_future(sf, frame_idx, features),
                    previous_plan=previous_plan, timestamp=frame.t, scenario_id=sf.scenario_id,
                    wheelbase=config.wheelbase,
                )
                result = planner.plan(scene)
                traj_global = EgoFrameTransform(state.pose).inverse_trajectory(result.trajectory)
            except Exception as exc:  # any planner fault ends the rollout, it is not a harness fault
                status, message = SimStatus.PLANNER_FAILED, str(exc)
                break
            reference = Reference(t, state.pose, state.speed, traj_global)
            previous_plan = traj_global
            plan_id += 1
            replanned = True

        if reference is not None:
            s_err, v_err, lat, head, _, _ = tracker.errors(state, reference, t)
        else:
            s_err = v_err = lat = head = 0.0
        records.append({
            "t": round(t, 9),
            "x": state.pose.x, "y": state.pose.y, "yaw": state.pose.yaw,
            "v": state.speed, "accel": state.accel, "steer": state.steer,
            "plan_id": plan_id, "replanned": replanned,
            "lat_err": lat, "heading_err": head, "station_err": s_err, "speed_err": v_err,
            "agents": [[rec.id, (pose or rec.pose).x, (pose or rec.pose).y, (pose or rec.pose).yaw]
                       for rec, pose in agent_states],
        })
        if collided_with is not None:
            status, message = SimStatus.COLLIDED, f"collision with agent {collided_with}"
            break
        if off_road:
            status, message = SimStatus.OFF_ROAD, "ego footprint left the lane"
            break
        if k == n:
            break
        accel, steer = tracker.command(state, reference, t)
        if reactive:
            _step_reactive(reactive, state, ego_len, replayed, config)
        state = step_kinematics(state, accel, steer, config.dt, config.wheelbase)
        history.append(state.pose)

    context = {
        "start_index": k0,
        "dt": config.dt,
        "steps": n,
        "centerline": [list(p) for p in map_rec.centerline],
        "left_boundary": [list(p) for p in map_rec.left_boundary],
        "right_boundary": [list(p) for p in map_rec.right_boundary],
        "speed_limit": map_rec.speed_limit,
        "expert_progress": expert_end - expert_start,
        "ego_length": ego_len,
        "ego_width": ego_wid,
        "agent_dims": {k: dims[k] for k in sorted(dims)},
    }
    return SimLog(sf.scenario_id, getattr(planner, "name", type(planner).__name__), config.mode.value,
                  status.value, records, context, message)
