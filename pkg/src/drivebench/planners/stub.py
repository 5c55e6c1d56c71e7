"""Local HTTP endpoint speaking the planner wire format, with the rule chain behind it."""
from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional

from ..chain import ChainConfig, generate_chain
from ..prompt import parse_prompt, prompt_chain_steps, prompt_dt, prompt_trajectory_length
from ..response import render_response


def oracle_reply(prompt: str) -> str:
    """Answer a prompt the way the rule chain would, using only the prompt text."""
    scene = parse_prompt(prompt)
    dt = prompt_dt(prompt)
    n = prompt_trajectory_length(prompt)
    chain, traj = generate_chain(scene, prompt_chain_steps(prompt), ChainConfig(dt=dt, horizon=n * dt))
    return render_response(chain, traj)


class StubServer:
    """Threaded stub endpoint; use as a context manager.

    ``fail_next`` requests are answered with HTTP 503 (or, when ``stall`` is
    set, delayed by ``stall`` seconds first) before normal service resumes.
    ``responder`` replaces the oracle reply, e.g. to return garbage.
    """

    def __init__(self, responder: Callable[[str], str] = oracle_reply, fail_next: int = 0,
                 stall: Optional[float] = None, host: str = "127.0.0.1", port: int = 0):
        self.responder = responder
        self.fail_next = fail_next
        self.stall = stall
        self.requests = 0
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer((host, port), self._handler())
        self._server.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/"

    def _take_failure(self) -> bool:
        with self._lock:
            self.requests += 1
            if self.fail_next > 0:
                self.fail_next -= 1
                return True
            return False

    def _handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send(self, status: int, body: dict):
                data = json.dumps(body).encode()
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length))
                    prompt = body["prompt"]
                    int(body["max_tokens"]), float(body["temperature"]), float(body["top_p"])
                except (ValueError, KeyError, TypeError):
                    self._send(400, {"error": "bad request"})
                    return
                if stub._take_failure():
                    if stub.stall:
                        time.sleep(stub.stall)
                    self._send(503, {"error": "injected failure"})
                    return
                try:
                    text = stub.responder(prompt)
                except Exception as exc:  # report, do not kill the server thread
                    self._send(500, {"error": str(exc)})
                    return
                self._send(200, {"text": text})

        return Handler

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
