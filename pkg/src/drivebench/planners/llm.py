"""Planner backed by a text-completion endpoint."""
from __future__ import annotations

import logging
import os
import time
from typing import Optional

import requests

from ..chain import ChainConfig
from ..geometry import ScenarioState
from ..prompt import InstructionConfig, build_prompt
from ..response import ResponseParseError, parse_response
from ..scenario import FeatureConfig
from .base import PlanResult, PlannerError
from .decode import DecodeParams

log = logging.getLogger(__name__)

URL_ENV = "DRIVEBENCH_LLM_URL"


class TransportError(RuntimeError):
    pass


class LlmPlanner:
    """Sends the rendered prompt to an HTTP endpoint and parses the reply.

    Wire format: POST ``{"prompt", "max_tokens", "temperature", "top_p"}``,
    reply ``{"text"}`` with status 200. Transport failures are retried
    ``retries`` times with a fixed ``backoff``; an unparseable trajectory is
    a hard failure.
    """

    name = "llm"

    def __init__(self, url: Optional[str] = None, instructions: InstructionConfig = InstructionConfig(),
                 features: FeatureConfig = FeatureConfig(), decode: DecodeParams = DecodeParams(),
                 max_tokens: int = 2048, retries: int = 2, backoff: float = 1.0, timeout: float = 60.0,
                 chain: ChainConfig = ChainConfig()):
        url = url or os.environ.get(URL_ENV)
        if not url:
            raise ValueError(f"no endpoint URL given and {URL_ENV} is not set")
        if retries < 0 or backoff < 0 or timeout <= 0:
            raise ValueError("retries and backoff must be non-negative and timeout positive")
        self.url = url
        self.instructions = instructions
        self.features = features
        self.decode = decode
        self.max_tokens = max_tokens
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.chain = chain

    def _request(self, payload: dict) -> str:
        resp = requests.post(self.url, json=payload, timeout=self.timeout)
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}")
        try:
            text = resp.json()["text"]
        except (ValueError, KeyError, TypeError) as exc:
            raise TransportError("reply body lacks a 'text' field") from exc
        if not isinstance(text, str):
            raise TransportError("reply 'text' is not a string")
        return text

    def complete(self, prompt: str, scene_id: str = "") -> str:
        payload = {
            "prompt": prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.decode.temperature,
            "top_p": self.decode.top_p,
        }
        for attempt in range(self.retries + 1):
            try:
                return self._request(payload)
            except (requests.RequestException, TransportError) as exc:
                if attempt == self.retries:
                    raise PlannerError(self.name, scene_id, f"endpoint failed after {attempt + 1} attempts: {exc}") from exc
                log.info("endpoint attempt %d failed (%s); retrying", attempt + 1, exc)
                time.sleep(self.backoff)
        raise AssertionError("unreachable")

    def plan(self, scene: ScenarioState) -> PlanResult:
        start = time.perf_counter()
        try:
            bundle = build_prompt(scene, self.instructions, self.features, self.chain)
        except ValueError as exc:
            raise PlannerError(self.name, scene.scenario_id, str(exc)) from exc
        text = self.complete(bundle.text, scene.scenario_id)
        try:
            chain, traj = parse_response(text, expected_len=self.features.future_len, dt=self.features.dt)
        except ResponseParseError as exc:
            raise PlannerError(self.name, scene.scenario_id, f"unparseable response: {exc}") from exc
        return PlanResult(trajectory=traj, chain=chain, prompt_echo=bundle, latency=time.perf_counter() - start)
