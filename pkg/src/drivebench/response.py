"""Line-oriented text form of a reasoning chain plus trajectory.

Example::

    Step 1: Coarse action
    maneuver: go-straight
    Step 2: Collision forecast
    alert: agent=7, distance=2.31, time=1.50, sector=left-front, level=attention
    Step 3: Environment
    light: proceed
    speed: safe
    boundary: clear
    Step 4: Final action
    maneuver: go-straight
    speed: maintain
    Trajectory:
    (0.00, 5.00, 0.00)
    ...

Step sections are optional. A ``chain unavailable`` line marks a planner that
produced no chain at all.
"""
from __future__ import annotations

import re
from typing import Optional

from .chain import (
    ChainStep,
    CoarseAction,
    CollisionAlert,
    EnvAssessment,
    FinalAction,
    InstructChain,
    validate_steps,
)
from .geometry import Pose, Trajectory

STEP_TITLES = {
    1: "Coarse action",
    2: "Collision forecast",
    3: "Environment",
    4: "Final action",
}
CHAIN_UNAVAILABLE = "chain unavailable"

_NUM = r"-?\d+\.\d{2}"
_POSE_RE = re.compile(rf"^\(\s*({_NUM})\s*,\s*({_NUM})\s*,\s*({_NUM})\s*\)$")
_STEP_RE = re.compile(r"^Step\s+(\d+)\s*:(.*)$")
_ALERT_RE = re.compile(
    rf"^agent=(\S+?),\s*distance=({_NUM}),\s*time=({_NUM}),\s*sector=([a-z-]+),\s*level=([a-z]+)$"
)


class ResponseParseError(ValueError):
    """Raised when a response cannot be parsed; names the line and the expected token."""

    def __init__(self, line: int, expected: str, got: str = ""):
        self.line = line
        self.expected = expected
        msg = f"line {line}: expected {expected}"
        if got:
            msg += f", got {got!r}"
        super().__init__(msg)


def fmt(value: float) -> str:
    """Fixed 2-decimal formatting without a negative zero."""
    text = f"{value:.2f}"
    return "0.00" if text == "-0.00" else text


def render_pose(p: Pose) -> str:
    return f"({fmt(p.x)}, {fmt(p.y)}, {fmt(p.yaw)})"


def render_chain(chain: Optional[InstructChain]) -> list[str]:
    if chain is None:
        return [CHAIN_UNAVAILABLE]
    lines = []
    if chain.step1 is not None:
        lines += [f"Step 1: {STEP_TITLES[1]}", f"maneuver: {chain.step1.maneuver.value}"]
    if chain.step2 is not None:
        lines.append(f"Step 2: {STEP_TITLES[2]}")
        if not chain.step2:
            lines.append("alerts: none")
        for a in chain.step2:
            lines.append(
                f"alert: agent={a.agent_id}, distance={fmt(a.min_distance)}, time={fmt(a.time_offset)}, "
                f"sector={a.sector.value}, level={a.level.value}"
            )
    if chain.step3 is not None:
        env = chain.step3
        lines += [
            f"Step 3: {STEP_TITLES[3]}",
            f"light: {env.light_ruling.value}",
            f"speed: {env.speed_tier.value}",
            f"boundary: {'violated' if env.boundary_violation else 'clear'}",
        ]
    if chain.step4 is not None:
        lines += [
            f"Step 4: {STEP_TITLES[4]}",
            f"maneuver: {chain.step4.maneuver.value}",
            f"speed: {chain.step4.speed_modifier.value}",
        ]
    return lines


def render_response(chain: Optional[InstructChain], trajectory: Trajectory) -> str:
    lines = render_chain(chain)
    lines.append("Trajectory:")
    lines += [render_pose(p) for p in trajectory.poses]
    return "\n".join(lines) + "\n"


class _ChainError(Exception):
    pass


def _key_values(body: list[tuple[int, str]]) -> list[tuple[int, str, str]]:
    out = []
    for lineno, text in body:
        key, sep, value = text.partition(":")
        if not sep:
            raise _ChainError(f"line {lineno}: expected 'key: value'")
        out.append((lineno, key.strip(), value.strip()))
    return out


def _expect_keys(items, keys: tuple[str, ...]) -> dict[str, str]:
    got = tuple(k for _, k, _ in items)
    if got != keys:
        raise _ChainError(f"expected keys {keys}, got {got}")
    return {k: v for _, k, v in items}


def _build_step(number: int, body: list[tuple[int, str]]):
    try:
        items = _key_values(body)
        if number == 1:
            return CoarseAction(_expect_keys(items, ("maneuver",))["maneuver"])
        if number == 2:
            if [(k, v) for _, k, v in items] == [("alerts", "none")]:
                return ()
            alerts = []
            for lineno, key, value in items:
                m = _ALERT_RE.match(value)
                if key != "alert" or not m:
                    raise _ChainError(f"line {lineno}: malformed alert")
                aid, dist, t, sector, level = m.groups()
                alerts.append(CollisionAlert(aid, float(dist), float(t), sector, level))
            if not alerts:
                raise _ChainError("empty collision section")
            return tuple(alerts)
        if number == 3:
            kv = _expect_keys(items, ("light", "speed", "boundary"))
            if kv["boundary"] not in ("clear", "violated"):
                raise _ChainError("boundary must be clear or violated")
            return EnvAssessment(kv["light"], kv["speed"], kv["boundary"] == "violated")
        kv = _expect_keys(items, ("maneuver", "speed"))
        return FinalAction(kv["maneuver"], kv["speed"])
    except ValueError as exc:
        raise _ChainError(str(exc)) from exc


def parse_response(text: str, expected_len: Optional[int] = None, dt: float = 0.5) -> tuple[Optional[InstructChain], Trajectory]:
    """Parse a response into ``(chain, trajectory)``.

    A malformed or contradictory chain yields ``None`` for the chain while the
    trajectory is still returned. Text without step sections yields an empty
    chain. Trajectory problems raise :class:`ResponseParseError`.
    """
    lines = text.splitlines()
    sections: dict[int, list[tuple[int, str]]] = {}
    order: list[int] = []
    current: Optional[list] = None
    chain_ok = True
    unavailable = False
    traj_start = None
    for i, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "Trajectory:":
            traj_start = i
            break
        if line == CHAIN_UNAVAILABLE:
            unavailable = True
            current = None
            continue
        m = _STEP_RE.match(line)
        if m:
            n = int(m.group(1))
            if n not in STEP_TITLES or n in sections or (order and n < order[-1]):
                chain_ok = False
            current = sections.setdefault(n, [])
            order.append(n)
            continue
        if current is None:
            # free text before the first section is ignored
            continue
        current.append((i, line))

    if traj_start is None:
        raise ResponseParseError(len(lines) + 1, "'Trajectory:' section")

    poses = []
    for i in range(traj_start + 1, len(lines) + 1):
        line = lines[i - 1].strip()
        if not line:
            continue
        m = _POSE_RE.match(line)
        if not m:
            fields = line.strip("()").split(",") if line.startswith("(") else []
            if fields and len(fields) != 3:
                raise ResponseParseError(i, "3 fields '(x, y, yaw)'", line)
            raise ResponseParseError(i, "pose line '(x, y, yaw)' with 2-decimal numbers", line)
        x, y, yaw = (float(g) for g in m.groups())
        poses.append(Pose(x, y, yaw))
    if not poses:
        raise ResponseParseError(traj_start + 1, "at least one pose line")
    if expected_len is not None and len(poses) != expected_len:
        raise ResponseParseError(traj_start + len(poses), f"{expected_len} pose lines, found {len(poses)}")
    try:
        trajectory = Trajectory(tuple(poses), dt)
    except ValueError as exc:
        raise ResponseParseError(traj_start, "a feasible trajectory", str(exc)) from exc

    if unavailable:
        return None, trajectory
    chain = None
    if chain_ok:
        try:
            built = {n: _build_step(n, body) for n, body in sections.items()}
            steps = validate_steps(ChainStep(f"s{n}") for n in built)
            chain = InstructChain(
                step1=built.get(1), step2=built.get(2), step3=built.get(3), step4=built.get(4), enabled_steps=steps
            )
        except (_ChainError, ValueError):
            chain = None
    return chain, trajectory
