"""Planners that need no model: expert log replay and the rule-based chain."""
from __future__ import annotations

from typing import Iterable

from ..chain import ALL_STEPS, ChainConfig, generate_chain, validate_steps
from ..geometry import ScenarioState
from .base import PlanResult, PlannerError


class LogReplayPlanner:
    """Returns the logged expert future unchanged."""

    name = "log-replay"

    def plan(self, scene: ScenarioState) -> PlanResult:
        if scene.expert_future is None:
            raise PlannerError(self.name, scene.scenario_id, "scene carries no expert future")
        return PlanResult(trajectory=scene.expert_future)


class ChainOraclePlanner:
    """Runs the rule-based reasoning chain directly on the scene."""

    name = "chain-oracle"

    def __init__(self, steps: Iterable = ALL_STEPS, config: ChainConfig = ChainConfig()):
        self.steps = validate_steps(steps)
        self.config = config

    def plan(self, scene: ScenarioState) -> PlanResult:
        try:
            chain, traj = generate_chain(scene, self.steps, self.config)
        except ValueError as exc:
            raise PlannerError(self.name, scene.scenario_id, str(exc)) from exc
        return PlanResult(trajectory=traj, chain=chain)
