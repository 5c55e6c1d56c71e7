"""Text prompt for a planning instant: fixed instructions plus the serialized scene."""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

from .chain import ALL_STEPS, ChainConfig, ChainStep, validate_steps
from .geometry import (
    AgentObject,
    Category,
    EgoState,
    Frame,
    MapContext,
    Pose,
    Quad,
    ScenarioState,
    TrafficLight,
    Trajectory,
    agent_distance,
)
from .response import STEP_TITLES, fmt, render_pose
from .scenario import FeatureConfig, correct_category

TOKEN_BUDGET = 12288
CHARS_PER_UNIT = 4


class Instruction(str, enum.Enum):
    COARSE_ACTION = "coarse-action"
    REFINED_ACTION = "refined-action"
    COLLISION_AVOIDANCE = "collision-avoidance"
    TRAFFIC_SIGNALS = "traffic-signals"
    SPEED_LIMIT = "speed-limit"


ALL_INSTRUCTIONS = frozenset(Instruction)


class PromptBudgetError(ValueError):
    def __init__(self, estimate: int, budget: int):
        self.estimate = estimate
        self.budget = budget
        super().__init__(f"prompt needs an estimated {estimate} units, above the budget of {budget}")


@dataclass(frozen=True)
class InstructionConfig:
    enabled_instructions: frozenset = ALL_INSTRUCTIONS
    include_previous_plan: bool = False
    category_correction: bool = False
    chain_steps: frozenset = ALL_STEPS
    prediction_spacing: float = 1.0
    prediction_horizon: float = 4.0
    token_budget: int = TOKEN_BUDGET

    def __post_init__(self):
        enabled = frozenset(Instruction(i) for i in self.enabled_instructions)
        if Instruction.REFINED_ACTION in enabled and Instruction.COARSE_ACTION not in enabled:
            raise ValueError("refined-action instruction requires coarse-action")
        object.__setattr__(self, "enabled_instructions", enabled)
        object.__setattr__(self, "chain_steps", validate_steps(self.chain_steps))
        if self.prediction_spacing <= 0 or self.prediction_horizon < 0:
            raise ValueError("prediction spacing must be positive and horizon non-negative")


@dataclass(frozen=True)
class PromptBundle:
    instruction_text: str
    input_text: str
    config_echo: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if not self.instruction_text or not self.input_text:
            raise ValueError("prompt texts must be non-empty")

    @property
    def text(self) -> str:
        """The full prompt as sent over the wire."""
        return self.instruction_text + "\n" + self.input_text

    @property
    def estimate(self) -> int:
        return budget_estimate(self.text)


def budget_estimate(text: str) -> int:
    return math.ceil(len(text) / CHARS_PER_UNIT)


# ---------------------------------------------------------------------------
# Instruction text

COORDINATE_SENTENCE = (
    "The ego vehicle is at the origin (0.00, 0.00). The forward direction aligns with the positive Y-axis "
    "and the positive X-axis points to the right. Yaw angles rotate counterclockwise from the positive "
    "X-axis and are reported relative to the ego heading, so the ego yaw reads 0.00."
)
OBJECT_SENTENCE = (
    "Every object, including the ego vehicle, is a quadrilateral listed by its four vertices (x, y) in "
    "counterclockwise order starting at the front-left corner."
)
TRAJECTORY_OBJECTIVE = "Trajectory generation: output the planned poses (x, y, yaw) of the ego vehicle."


def render_system_description() -> str:
    return "\n".join([
        "System description:",
        "You are the motion planner of an autonomous vehicle.",
        COORDINATE_SENTENCE,
        OBJECT_SENTENCE,
        "Distances are in meters, speeds in m/s, accelerations in m/s^2, times in seconds and angles in radians.",
        "Objectives:",
        "1. Scenario consideration: read the objects, the map and the ego state.",
        "2. Action planning: decide a maneuver and how to change speed.",
        "3. " + TRAJECTORY_OBJECTIVE,
    ])


def _instruction_lines(enabled: frozenset, chain: ChainConfig) -> list[str]:
    text = {
        Instruction.COARSE_ACTION: "Plan a coarse action from the lane geometry: go-straight, turn-left, turn-right or stop.",
        Instruction.REFINED_ACTION: "Refine the coarse action with a speed change: accelerate, maintain, decelerate or stop.",
        Instruction.COLLISION_AVOIDANCE: (
            f"Avoid collisions: objects within {fmt(chain.attention_radius)} m of the ego footprint need attention "
            f"and objects within {fmt(chain.caution_radius)} m need caution."
        ),
        Instruction.TRAFFIC_SIGNALS: "Obey traffic signals: green means proceed, yellow means prepare to stop, red means stop.",
        Instruction.SPEED_LIMIT: "Adhere to the speed limit: do not accelerate close to it and decelerate when above it.",
    }
    return [f"- {text[i]}" for i in Instruction if i in enabled]


def render_output_format(steps: frozenset, n_poses: int, dt: float) -> str:
    lines = ["Output format:"]
    for n, title in STEP_TITLES.items():
        if ChainStep(f"s{n}") in steps:
            lines.append(f"Step {n}: {title}")
    lines.append("Trajectory:")
    lines.append(f"{n_poses} lines (x, y, yaw), one every {fmt(dt)} s, numbers with 2 decimals.")
    return "\n".join(lines)


def render_instructions(config: InstructionConfig, features: FeatureConfig = FeatureConfig(),
                        chain: ChainConfig = ChainConfig()) -> str:
    lines = [render_system_description(), "Instructions:"]
    lines += _instruction_lines(config.enabled_instructions, chain)
    lines.append(render_output_format(config.chain_steps, features.future_len, features.dt))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Input text


def _point(p) -> str:
    return f"({fmt(p[0])}, {fmt(p[1])})"


def _points(pts) -> str:
    return ", ".join(_point(p) for p in pts)


def _predictions(agent: AgentObject, config: InstructionConfig) -> list[tuple[float, tuple[float, float]]]:
    out = []
    for t, p in agent.predicted_positions:
        k = t / config.prediction_spacing
        if abs(k - round(k)) < 1e-6 and t <= config.prediction_horizon + 1e-9:
            out.append((t, p))
    return out


def render_observation(scene: ScenarioState, config: InstructionConfig = InstructionConfig()) -> str:
    lines = ["Observation:"]
    for n, agent in enumerate(scene.agents, start=1):
        if config.category_correction:
            agent = correct_category(agent)
        preds = _predictions(agent, config)
        lines += [
            f"Object {n}: id={agent.id}, category={agent.category.value}",
            f"vertices: {_points(agent.footprint.vertices)}",
            f"pose: {render_pose(agent.pose)}",
            f"velocity: {fmt(agent.velocity)}",
            "predicted: " + ("; ".join(f"t={fmt(t)} {_point(p)}" for t, p in preds) if preds else "none"),
        ]
    m = scene.map
    lines += [
        "Map:",
        f"traffic light: {m.traffic_light.value}",
        f"speed limit: {fmt(m.speed_limit)}",
        f"centerline: {_points(m.lane_centerline)}",
        f"left boundary: {_points(m.left_boundary)}",
        f"right boundary: {_points(m.right_boundary)}",
    ]
    return "\n".join(lines) + "\n"


def render_ego_state(scene: ScenarioState, config: InstructionConfig = InstructionConfig(), dt: float = 0.5) -> str:
    """Ego block; ``dt`` is the spacing of the past trajectory."""
    ego = scene.ego
    n_past = len(ego.past_trajectory)
    lines = [
        "Ego state:",
        f"vertices: {_points(ego.footprint.vertices)}",
        f"pose: {render_pose(ego.pose)}",
        f"velocity: {fmt(ego.velocity)}",
        f"acceleration: {fmt(ego.acceleration)}",
        "past trajectory:",
    ]
    lines += [f"t={fmt(-(n_past - 1 - i) * dt)} {render_pose(p)}" for i, p in enumerate(ego.past_trajectory)]
    if config.include_previous_plan:
        if scene.previous_plan is None:
            raise ValueError("previous plan requested but the scene has none")
        lines.append("previous plan:")
        lines += [render_pose(p) for p in scene.previous_plan.poses]
    return "\n".join(lines) + "\n"


def build_prompt(scene: ScenarioState, config: InstructionConfig = InstructionConfig(),
                 features: FeatureConfig = FeatureConfig(), chain: ChainConfig = ChainConfig()) -> PromptBundle:
    if scene.frame is not Frame.EGO:
        raise ValueError("prompts are rendered from ego-frame scenes")
    bundle = PromptBundle(
        instruction_text=render_instructions(config, features, chain),
        input_text=render_observation(scene, config) + render_ego_state(scene, config, features.dt),
        config_echo=features,
    )
    if bundle.estimate > config.token_budget:
        raise PromptBudgetError(bundle.estimate, config.token_budget)
    return bundle


# ---------------------------------------------------------------------------
# Reading a prompt back

_PAIR = re.compile(r"\((-?\d+\.\d{2}), (-?\d+\.\d{2})\)")
_TRIPLE = re.compile(r"\((-?\d+\.\d{2}), (-?\d+\.\d{2}), (-?\d+\.\d{2})\)")
_PRED = re.compile(r"t=(-?\d+\.\d{2}) \((-?\d+\.\d{2}), (-?\d+\.\d{2})\)")
_OBJECT = re.compile(r"^Object \d+: id=(\S+), category=([a-z]+)$")


class PromptParseError(ValueError):
    pass


def _pairs(text: str) -> tuple[tuple[float, float], ...]:
    return tuple((float(a), float(b)) for a, b in _PAIR.findall(text))


def _pose(text: str) -> Pose:
    m = _TRIPLE.search(text)
    if not m:
        raise PromptParseError(f"expected a pose in {text!r}")
    return Pose(*(float(g) for g in m.groups()))


def _value(line: str, key: str) -> str:
    if not line.startswith(key + ":"):
        raise PromptParseError(f"expected '{key}:' but found {line!r}")
    return line[len(key) + 1:].strip()


def prompt_chain_steps(text: str) -> frozenset:
    """Chain steps requested by the output-format section of a prompt."""
    lines = text.splitlines()
    try:
        start = lines.index("Output format:")
    except ValueError as exc:
        raise PromptParseError("prompt has no output format section") from exc
    steps = []
    for line in lines[start + 1:]:
        if line == "Trajectory:":
            break
        m = re.match(r"^Step (\d): ", line)
        if m:
            steps.append(ChainStep(f"s{m.group(1)}"))
    return validate_steps(steps)


def prompt_trajectory_length(text: str) -> int:
    m = re.search(r"^(\d+) lines \(x, y, yaw\), one every (\d+\.\d{2}) s", text, re.M)
    if not m:
        raise PromptParseError("prompt does not state the trajectory length")
    return int(m.group(1))


def prompt_dt(text: str) -> float:
    m = re.search(r"^\d+ lines \(x, y, yaw\), one every (\d+\.\d{2}) s", text, re.M)
    if not m:
        raise PromptParseError("prompt does not state the trajectory spacing")
    return float(m.group(1))


def parse_prompt(text: str) -> ScenarioState:
    """Rebuild an ego-frame scene (at 2-decimal precision) from prompt text.

    The expert future is not part of a prompt and comes back as ``None``.
    """
    lines = [ln for ln in text.splitlines()]
    try:
        i = lines.index("Observation:") + 1
    except ValueError as exc:
        raise PromptParseError("prompt has no observation section") from exc
    agents = []
    while lines[i].startswith("Object "):
        m = _OBJECT.match(lines[i])
        if not m:
            raise PromptParseError(f"malformed object header {lines[i]!r}")
        preds_text = _value(lines[i + 4], "predicted")
        preds = tuple((float(t), (float(x), float(y))) for t, x, y in _PRED.findall(preds_text))
        agents.append(AgentObject(
            id=m.group(1),
            category=Category(m.group(2)),
            footprint=Quad(_pairs(_value(lines[i + 1], "vertices"))),
            pose=_pose(_value(lines[i + 2], "pose")),
            velocity=float(_value(lines[i + 3], "velocity")),
            predicted_positions=preds,
        ))
        i += 5
    if lines[i] != "Map:":
        raise PromptParseError(f"expected 'Map:' but found {lines[i]!r}")
    mp = MapContext(
        traffic_light=TrafficLight(_value(lines[i + 1], "traffic light")),
        speed_limit=float(_value(lines[i + 2], "speed limit")),
        lane_centerline=_pairs(_value(lines[i + 3], "centerline")),
        left_boundary=_pairs(_value(lines[i + 4], "left boundary")),
        right_boundary=_pairs(_value(lines[i + 5], "right boundary")),
    )
    i += 6
    if lines[i] != "Ego state:":
        raise PromptParseError(f"expected 'Ego state:' but found {lines[i]!r}")
    footprint = Quad(_pairs(_value(lines[i + 1], "vertices")))
    pose = _pose(_value(lines[i + 2], "pose"))
    velocity = float(_value(lines[i + 3], "velocity"))
    accel = float(_value(lines[i + 4], "acceleration"))
    if lines[i + 5] != "past trajectory:":
        raise PromptParseError("expected 'past trajectory:'")
    i += 6
    past = []
    while i < len(lines) and lines[i].startswith("t="):
        past.append(_pose(lines[i]))
        i += 1
    previous = None
    if i < len(lines) and lines[i] == "previous plan:":
        i += 1
        plan = []
        while i < len(lines) and lines[i].startswith("("):
            plan.append(_pose(lines[i]))
            i += 1
        dt = prompt_dt(text) if "Output format:" in text else 0.5
        previous = Trajectory(tuple(plan), dt)
    ego = EgoState(pose=pose, velocity=velocity, acceleration=accel, footprint=footprint, past_trajectory=tuple(past))
    # rounding can swap near-equal distances; keep the order valid
    agents.sort(key=lambda a: agent_distance(pose, a))
    return ScenarioState(ego=ego, agents=tuple(agents), map=mp, expert_future=None, previous_plan=previous,
                         frame=Frame.EGO)

