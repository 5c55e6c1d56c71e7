"""Run configuration: one JSON document that can override every tunable constant."""
from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

from .chain import ALL_STEPS, ChainConfig, validate_steps
from .metrics import MetricConfig
from .planners.decode import DecodeParams
from .planners.idm import IdmParams
from .prompt import InstructionConfig
from .scenario import FeatureConfig
from .simulator import SimConfig
from .synth import TEMPLATES

PLANNER_NAMES = ("log-replay", "chain-oracle", "idm", "llm")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LlmConfig:
    url: Optional[str] = None
    use_stub: bool = False
    max_tokens: int = 2048
    retries: int = 2
    backoff: float = 1.0
    timeout: float = 60.0


@dataclass(frozen=True)
class RunConfig:
    templates: tuple[str, ...] = TEMPLATES
    seeds: int = 3
    seed: int = 0
    background_agents: int = 0
    scenario_globs: tuple[str, ...] = ()
    planners: tuple[str, ...] = ("idm", "log-replay")
    chain_steps: frozenset = ALL_STEPS
    output_dir: str = "runs/latest"
    workers: int = 4
    sim: SimConfig = SimConfig()
    features: FeatureConfig = FeatureConfig()
    instructions: InstructionConfig = InstructionConfig()
    chain: ChainConfig = ChainConfig()
    idm: IdmParams = IdmParams()
    metrics: MetricConfig = MetricConfig()
    decode: DecodeParams = DecodeParams()
    llm: LlmConfig = LlmConfig()

    def __post_init__(self):
        for t in self.templates:
            if t not in TEMPLATES:
                raise ConfigError(f"unknown template {t!r}")
        for p in self.planners:
            if p not in PLANNER_NAMES:
                raise ConfigError(f"unknown planner {p!r}; expected one of {', '.join(PLANNER_NAMES)}")
        if not self.planners:
            raise ConfigError("at least one planner is required")
        if self.seeds < 0 or self.workers < 1:
            raise ConfigError("seeds must be >= 0 and workers >= 1")
        if not self.scenario_globs and not (self.templates and self.seeds):
            raise ConfigError("the scenario set is empty")
        object.__setattr__(self, "chain_steps", validate_steps(self.chain_steps))
        if abs(self.chain.dt - self.features.dt) > 1e-9 or abs(self.chain.horizon - self.features.future_horizon) > 1e-9:
            raise ConfigError("chain dt and horizon must match the feature dt and future horizon")
        # chain steps and the PT/CC flags must agree across the pieces that use them;
        # the instruction config is authoritative
        object.__setattr__(self, "instructions", dataclasses.replace(self.instructions, chain_steps=self.chain_steps))
        object.__setattr__(self, "features", dataclasses.replace(
            self.features,
            include_previous_plan=self.instructions.include_previous_plan,
            category_correction=self.instructions.category_correction,
        ))


_NESTED = {
    "sim": SimConfig,
    "features": FeatureConfig,
    "instructions": InstructionConfig,
    "chain": ChainConfig,
    "idm": IdmParams,
    "metrics": MetricConfig,
    "decode": DecodeParams,
    "llm": LlmConfig,
}


def _coerce(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    return value


def _build(cls, data: Mapping, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key == "agent_idm" and cls is SimConfig:
            kwargs[key] = _build(IdmParams, value, f"{where}.agent_idm")
        elif key in ("enabled_instructions", "chain_steps"):
            kwargs[key] = frozenset(value)
        else:
            kwargs[key] = _coerce(value)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def run_config_from_dict(data: Mapping) -> RunConfig:
    data = dict(data)
    kwargs = {}
    for key, cls in _NESTED.items():
        if key in data:
            kwargs[key] = _build(cls, data.pop(key), key)
    top = _build(RunConfig, data, "config") if data else RunConfig()
    try:
        return dataclasses.replace(top, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return run_config_from_dict(data)


def _plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (frozenset, set)):
        return sorted(_plain(v) for v in value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, enum.Enum):
        return value.value
    return value


def config_to_dict(config: RunConfig) -> dict:
    """JSON-ready form; loading it back yields an equal config."""
    return _plain(config)
