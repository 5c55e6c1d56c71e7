"""Planner contract shared by every implementation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

from ..chain import InstructChain
from ..geometry import ScenarioState, Trajectory
from ..prompt import PromptBundle


@dataclass(frozen=True)
class PlanResult:
    trajectory: Trajectory
    chain: Optional[InstructChain] = None
    prompt_echo: Optional[PromptBundle] = None
    latency: float = 0.0


class PlannerError(RuntimeError):
    """A planner could not produce a trajectory for a scene."""

    def __init__(self, planner_id: str, scene_id: str, message: str):
        self.planner_id = planner_id
        self.scene_id = scene_id
        super().__init__(f"[{planner_id}] scene {scene_id or '?'}: {message}")


@runtime_checkable
class Planner(Protocol):
    name: str

    def plan(self, scene: ScenarioState) -> PlanResult:
        ...
