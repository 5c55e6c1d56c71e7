"""Closed-loop benchmark harness for instruction-following motion planners."""
from .chain import ALL_STEPS, ChainConfig, InstructChain, generate_chain
from .config import ConfigError, RunConfig, load_run_config
from .geometry import Pose, Quad, ScenarioState, Trajectory, min_polygon_distance, transform_to_ego_frame
from .metrics import MetricConfig, closed_loop_score, open_loop_report
from .prompt import InstructionConfig, build_prompt
from .response import parse_response, render_response
from .scenario import FeatureConfig, build_scenario_state, load_scenario
from .simulator import SimConfig, SimLog, SimMode, run_closed_loop
from .synth import TEMPLATES, synth_scenario

__version__ = "0.1.0"

__all__ = [
    "ALL_STEPS", "ChainConfig", "ConfigError", "FeatureConfig", "InstructChain", "InstructionConfig",
    "MetricConfig", "Pose", "Quad", "RunConfig", "ScenarioState", "SimConfig", "SimLog", "SimMode",
    "TEMPLATES", "Trajectory", "build_prompt", "build_scenario_state", "closed_loop_score", "generate_chain",
    "load_run_config", "load_scenario", "min_polygon_distance", "open_loop_report", "parse_response",
    "render_response", "run_closed_loop", "synth_scenario", "transform_to_ego_frame",
]
