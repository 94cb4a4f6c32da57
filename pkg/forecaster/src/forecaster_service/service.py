"""The newline-delimited JSON protocol loop.

Sessions alternate strictly: one request line in, one response line out.
A session opens with {"op":"hello"} -> {"name","d","min_context"}; sample
requests carry the full conditioning history plus a seed, so responses are
reproducible. Malformed requests get an {"error": ...} line and the session
continues.
"""

from __future__ import annotations

import json
import socketserver
import sys

import numpy as np

from .config import ServiceConfig
from .models import SamplerBackend, backend_from_config


class Session:
    """Transport-agnostic request handler: one JSON line in, one out."""

    def __init__(self, backend: SamplerBackend, config: ServiceConfig):
        self.backend = backend
        self.config = config

    def handle_line(self, line: str) -> str:
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            return json.dumps({"error": "request is not valid JSON"})
        if not isinstance(req, dict):
            return json.dumps({"error": "request must be a JSON object"})
        op = req.get("op")
        if op == "hello":
            return json.dumps(
                {
                    "name": self.config.name,
                    "d": self.config.d,
                    "min_context": self.config.min_context,
                }
            )
        if op != "sample":
            return json.dumps({"error": f"unknown op {op!r}"})
        return self._handle_sample(req)

    def _handle_sample(self, req: dict) -> str:
        try:
            m = int(req["m"])
            h = int(req["h"])
            seed = int(req["seed"])
            history = np.asarray(req["history"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            return json.dumps({"error": f"bad sample request: {exc}"})
        if m < 1 or h < 1:
            return json.dumps({"error": "m and h must be >= 1"})
        if history.ndim != 2 or history.shape[1] != self.config.d:
            return json.dumps(
                {"error": f"history must be T x {self.config.d}"}
            )
        if history.shape[0] < self.config.min_context:
            return json.dumps(
                {
                    "error": f"history has {history.shape[0]} rows, need at "
                    f"least {self.config.min_context}"
                }
            )
        if not np.all(np.isfinite(history)):
            return json.dumps({"error": "history contains non-finite values"})
        try:
            samples = self.backend.sample(history, m, h, seed)
        except Exception as exc:  # keep the session alive on backend faults
            return json.dumps({"error": f"sampler failed: {exc}"})
        if samples.shape != (m, h, self.config.d) or not np.all(
            np.isfinite(samples)
        ):
            return json.dumps({"error": "backend produced an invalid batch"})
        return json.dumps({"samples": samples.tolist(), "shape": [m, h, self.config.d]})


def serve_stdio(config: ServiceConfig) -> int:
    """Serve one session over stdin/stdout. Returns a process exit code."""
    try:
        backend = backend_from_config(config)
    except Exception as exc:
        # Model-load failures surface as a handshake error, then exit nonzero.
        sys.stdin.readline()
        print(json.dumps({"error": f"startup failed: {exc}"}), flush=True)
        return 1
    session = Session(backend, config)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        print(session.handle_line(line), flush=True)
    return 0


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self):
        session = Session(self.server.backend, self.server.config)
        for raw in self.rfile:
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            self.wfile.write((session.handle_line(line) + "\n").encode("utf-8"))
            self.wfile.flush()


class TcpService(socketserver.ThreadingTCPServer):
    """One independent session per connection."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.backend = backend_from_config(config)
        super().__init__(("127.0.0.1", config.port), _TcpHandler)

    @property
    def port(self) -> int:
        return self.server_address[1]


def serve_tcp(config: ServiceConfig) -> int:
    try:
        server = TcpService(config)
    except Exception as exc:
        print(json.dumps({"error": f"startup failed: {exc}"}), file=sys.stderr)
        return 1
    print(f"listening on 127.0.0.1:{server.port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def serve(config: ServiceConfig) -> int:
    if config.listen == "tcp":
        return serve_tcp(config)
    return serve_stdio(config)
