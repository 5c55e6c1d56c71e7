from .base import PlanResult, Planner, PlannerError
from .decode import DecodeParams, decode_token, nucleus
from .idm import IdmParams, IdmPlanner, idm_accel
from .llm import LlmPlanner
from .replay import ChainOraclePlanner, LogReplayPlanner
from .stub import StubServer, oracle_reply

__all__ = [
    "ChainOraclePlanner",
    "DecodeParams",
    "IdmParams",
    "IdmPlanner",
    "LlmPlanner",
    "LogReplayPlanner",
    "PlanResult",
    "Planner",
    "PlannerError",
    "StubServer",
    "decode_token",
    "idm_accel",
    "nucleus",
    "oracle_reply",
]
