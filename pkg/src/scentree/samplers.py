"""Trajectory samplers: the pluggable forecast distribution.

A sampler turns an observed price history into M seeded draws of the next h
hours. The tree builder, the Monte-Carlo planner, and the deterministic
planner all consume this one contract, so any forecaster that can produce
conditioned sample paths (synthetic processes here, a remote diffusion
service over the wire protocol) plugs into the same machinery.

All samplers are deterministic functions of (request, parameters, seed).
"""

from __future__ import annotations

import json
import os
import selectors
import socket
import subprocess
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidInputError,
    ProtocolError,
    RemoteSamplerError,
    SamplerTimeoutError,
)

_SEED_LIMIT = 1 << 64


@dataclass(frozen=True, eq=False)
class SamplerRequest:
    """One sampling request: condition on `history`, draw m paths of h hours."""

    history: np.ndarray  # (T, D), most recent row last
    m: int
    h: int
    seed: int

    def __post_init__(self) -> None:
        hist = np.asarray(self.history, dtype=float)
        if hist.ndim != 2 or hist.shape[0] < 1:
            raise InvalidInputError("history must be a T x D matrix with T >= 1")
        if not np.all(np.isfinite(hist)):
            raise InvalidInputError("history contains non-finite values")
        object.__setattr__(self, "history", hist)
        if self.m < 1:
            raise InvalidInputError(f"sample count m must be >= 1, got {self.m}")
        if self.h < 1:
            raise InvalidInputError(f"horizon h must be >= 1, got {self.h}")
        if not 0 <= self.seed < _SEED_LIMIT:
            raise InvalidInputError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """m sampled trajectories of shape (m, h, D), finite prices in $/MWh."""

    samples: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 3:
            raise InvalidInputError("samples must have shape (m, h, D)")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("samples contain non-finite values")
        object.__setattr__(self, "samples", arr)

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    def mean_trajectory(self) -> np.ndarray:
        """Per-hour mean over the m samples, shape (h, D)."""
        return self.samples.mean(axis=0)


class TrajectorySampler:
    """Base class: shared request validation. Subclasses implement _draw."""

    dim: int = 1
    min_context: int = 1

    def sample(self, req: SamplerRequest) -> TrajectoryBatch:
        if req.history.shape[1] != self.dim:
            raise InvalidInputError(
                f"history has dimension {req.history.shape[1]}, sampler expects {self.dim}"
            )
        if req.history.shape[0] < self.min_context:
            raise InvalidInputError(
                f"history has {req.history.shape[0]} rows, sampler needs at least "
                f"{self.min_context}"
            )
        batch = self._draw(req)
        if batch.samples.shape != (req.m, req.h, self.dim):
            raise InvalidInputError(
                f"sampler produced shape {batch.samples.shape}, "
                f"expected {(req.m, req.h, self.dim)}"
            )
        return batch

    def _draw(self, req: SamplerRequest) -> TrajectoryBatch:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Gaussian vector-autoregressive sampler (classical baseline)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianARParams:
    """First-order VAR: x_{t+1} = intercept + transition @ x_t + noise."""

    transition: np.ndarray  # (D, D)
    intercept: np.ndarray  # (D,)
    noise_scale: np.ndarray  # (D,), per-dimension std dev

    def __post_init__(self) -> None:
        a = np.atleast_2d(np.asarray(self.transition, dtype=float))
        c = np.atleast_1d(np.asarray(self.intercept, dtype=float))
        s = np.atleast_1d(np.asarray(self.noise_scale, dtype=float))
        d = c.size
        if a.shape != (d, d) or s.size != d:
            raise InvalidInputError("transition/intercept/noise_scale sizes disagree")
        radius = float(np.max(np.abs(np.linalg.eigvals(a))))
        if radius >= 1.0:
            raise InvalidInputError(
                f"transition matrix spectral radius {radius:.6f} >= 1 (non-stationary)"
            )
        if np.any(s < 0):
            raise InvalidInputError("noise_scale must be >= 0")
        object.__setattr__(self, "transition", a)
        object.__setattr__(self, "intercept", c)
        object.__setattr__(self, "noise_scale", s)

    @property
    def dim(self) -> int:
        return self.intercept.size


def gaussian_ar_sample(req: SamplerRequest, params: GaussianARParams) -> TrajectoryBatch:
    """Roll the VAR recursion forward from the last history row, seeded."""
    d = params.dim
    if req.history.shape[1] != d:
        raise InvalidInputError(
            f"history dimension {req.history.shape[1]} != parameter dimension {d}"
        )
    rng = np.random.default_rng(req.seed)
    eps = rng.standard_normal((req.m, req.h, d)) * params.noise_scale
    out = np.empty((req.m, req.h, d))
    x = np.tile(req.history[-1], (req.m, 1))
    for t in range(req.h):
        x = params.intercept + x @ params.transition.T + eps[:, t, :]
        out[:, t, :] = x
    return TrajectoryBatch(out)


class GaussianARSampler(TrajectorySampler):
    def __init__(self, params: GaussianARParams):
        self.params = params
        self.dim = params.dim

    def _draw(self, req: SamplerRequest) -> TrajectoryBatch:
        return gaussian_ar_sample(req, self.params)


# ---------------------------------------------------------------------------
# Regime mixture sampler (controlled multimodal process)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegimeMixtureParams:
    """Mixture of linear-drift regimes around the last observed row.

    A sample first draws regime j with probability weights[j], then follows
    last_row + drifts[j] * step_index + Gaussian noise.
    """

    weights: np.ndarray  # (R,)
    drifts: np.ndarray  # (R, D)
    noise_scale: float = 0.0

    def __post_init__(self) -> None:
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        dr = np.atleast_2d(np.asarray(self.drifts, dtype=float))
        if dr.shape[0] != w.size:
            raise InvalidInputError("one drift vector per regime required")
        if np.any(w <= 0):
            raise InvalidInputError("regime weights must all be > 0")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise InvalidInputError(f"regime weights sum to {w.sum()!r}, expected 1")
        if self.noise_scale < 0:
            raise InvalidInputError("noise_scale must be >= 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "drifts", dr)

    @property
    def dim(self) -> int:
        return self.drifts.shape[1]


def regime_mixture_sample(
    req: SamplerRequest, params: RegimeMixtureParams
) -> TrajectoryBatch:
    if req.history.shape[1] != params.dim:
        raise InvalidInputError(
            f"history dimension {req.history.shape[1]} != parameter dimension {params.dim}"
        )
    rng = np.random.default_rng(req.seed)
    regimes = rng.choice(params.weights.size, size=req.m, p=params.weights)
    steps = np.arange(1, req.h + 1, dtype=float)
    base = req.history[-1]
    out = (
        base[None, None, :]
        + params.drifts[regimes][:, None, :] * steps[None, :, None]
    )
    if params.noise_scale > 0:
        out = out + rng.standard_normal(out.shape) * params.noise_scale
    return TrajectoryBatch(out)


class RegimeMixtureSampler(TrajectorySampler):
    def __init__(self, params: RegimeMixtureParams):
        self.params = params
        self.dim = params.dim

    def _draw(self, req: SamplerRequest) -> TrajectoryBatch:
        return regime_mixture_sample(req, self.params)


# ---------------------------------------------------------------------------
# Bootstrap sampler (resamples historical day blocks)
# ---------------------------------------------------------------------------


def bootstrap_sample(req: SamplerRequest, corpus: np.ndarray) -> TrajectoryBatch:
    """Resample whole historical blocks uniformly with replacement.

    `corpus` is an (n_blocks, h, D) stack of historical stage windows; blocks
    are kept intact to preserve intra-day price shape.
    """
    blocks = np.asarray(corpus, dtype=float)
    if blocks.ndim != 3 or blocks.shape[0] == 0:
        raise InvalidInputError("corpus must be a non-empty stack of h x D blocks")
    if blocks.shape[1] != req.h or blocks.shape[2] != req.history.shape[1]:
        raise InvalidInputError(
            f"corpus blocks have shape {blocks.shape[1:]}, request expects "
            f"{(req.h, req.history.shape[1])}"
        )
    rng = np.random.default_rng(req.seed)
    idx = rng.integers(0, blocks.shape[0], size=req.m)
    return TrajectoryBatch(blocks[idx].copy())


class BootstrapSampler(TrajectorySampler):
    def __init__(self, corpus: np.ndarray):
        blocks = np.asarray(corpus, dtype=float)
        if blocks.ndim != 3 or blocks.shape[0] == 0:
            raise InvalidInputError("corpus must be a non-empty stack of h x D blocks")
        self.corpus = blocks
        self.dim = blocks.shape[2]

    def _draw(self, req: SamplerRequest) -> TrajectoryBatch:
        return bootstrap_sample(req, self.corpus)


# ---------------------------------------------------------------------------
# Degenerate samplers for baselines and tests
# ---------------------------------------------------------------------------


class ConstantSampler(TrajectorySampler):
    """Zero-variance sampler: every draw is the same fixed h x D block."""

    def __init__(self, block: np.ndarray):
        arr = np.atleast_2d(np.asarray(block, dtype=float))
        self.block = arr
        self.dim = arr.shape[1]

    def _draw(self, req: SamplerRequest) -> TrajectoryBatch:
        if req.h != self.block.shape[0]:
            raise InvalidInputError(
                f"constant block has {self.block.shape[0]} hours, request wants {req.h}"
            )
        return TrajectoryBatch(np.tile(self.block, (req.m, 1, 1)))


class ReplaySampler(TrajectorySampler):
    """Zero-variance sampler that 'forecasts' the true future of a fixed series.

    The conditioning history must be a prefix of the series (as it is during
    closed-loop evaluation, where centroids of a zero-variance tree coincide
    with the realized blocks); the history length locates the window.
    """

    def __init__(self, series: np.ndarray):
        arr = np.asarray(series, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        self.series = arr
        self.dim = arr.shape[1]

    def _draw(self, req: SamplerRequest) -> TrajectoryBatch:
        start = req.history.shape[0]
        end = start + req.h
        if end > self.series.shape[0]:
            raise InvalidInputError(
                f"replay window [{start}, {end}) exceeds series length "
                f"{self.series.shape[0]}"
            )
        block = self.series[start:end]
        return TrajectoryBatch(np.tile(block, (req.m, 1, 1)))


# ---------------------------------------------------------------------------
# Remote sampler over the newline-delimited JSON protocol
# ---------------------------------------------------------------------------


class _LineChannel:
    """One line out, one line in, with a deadline on reads."""

    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def recv_line(self, timeout: float) -> str:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class ProcessChannel(_LineChannel):
    """Spawns the remote sampler as a subprocess and talks over its stdio."""

    def __init__(self, argv: list[str]):
        self.proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )
        self._buf = b""
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)

    def send_line(self, line: str) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(line.encode("utf-8") + b"\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ProtocolError("remote sampler process closed its input") from exc

    def recv_line(self, timeout: float) -> str:
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl]
                self._buf = self._buf[nl + 1 :]
                return line.decode("utf-8")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise SamplerTimeoutError(
                    f"no response from remote sampler within {timeout} s"
                )
            if not self._sel.select(timeout=remaining):
                continue
            chunk = os.read(self.proc.stdout.fileno(), 1 << 16)
            if chunk == b"":
                raise ProtocolError("remote sampler closed its output stream")
            self._buf += chunk

    def close(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout):
            if stream is not None:
                try:
                    stream.close()
                except OSError:
                    pass
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        self._sel.close()


class TcpChannel(_LineChannel):
    def __init__(self, host: str, port: int):
        self.sock = socket.create_connection((host, port))
        self._buf = b""

    def send_line(self, line: str) -> None:
        try:
            self.sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as exc:
            raise ProtocolError("remote sampler connection closed") from exc

    def recv_line(self, timeout: float) -> str:
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl]
                self._buf = self._buf[nl + 1 :]
                return line.decode("utf-8")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise SamplerTimeoutError(
                    f"no response from remote sampler within {timeout} s"
                )
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(1 << 16)
            except socket.timeout:
                continue
            if chunk == b"":
                raise ProtocolError("remote sampler closed the connection")
            self._buf += chunk

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class ExternalSampler(TrajectorySampler):
    """Remote sampler speaking the NDJSON wire protocol.

    Session layout: one handshake line {"op":"hello"} answered with
    {"name","d","min_context"}, then strictly alternating sample
    requests/responses. Requests carry the seed so remote sampling stays
    reproducible. One channel supports one in-flight request at a time;
    concurrent workers need one channel each (calls are serialized here).
    """

    def __init__(self, channel: _LineChannel, timeout: float = 120.0):
        self.channel = channel
        self.timeout = timeout
        self._lock = threading.Lock()
        self.channel.send_line(json.dumps({"op": "hello"}))
        hello = self._read_json()
        try:
            self.name = str(hello["name"])
            self.dim = int(hello["d"])
            self.min_context = int(hello["min_context"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed handshake response: {hello!r}") from exc

    @classmethod
    def spawn(cls, argv: list[str], timeout: float = 120.0) -> "ExternalSampler":
        return cls(ProcessChannel(argv), timeout=timeout)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 120.0) -> "ExternalSampler":
        return cls(TcpChannel(host, port), timeout=timeout)

    def _read_json(self) -> dict:
        line = self.channel.recv_line(self.timeout)
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"remote sent invalid JSON: {line[:200]!r}") from exc
        if not isinstance(obj, dict):
            raise ProtocolError(f"remote sent a non-object response: {line[:200]!r}")
        if "error" in obj:
            raise RemoteSamplerError(str(obj["error"]))
        return obj

    def _draw(self, req: SamplerRequest) -> TrajectoryBatch:
        payload = json.dumps(
            {
                "op": "sample",
                "history": req.history.tolist(),
                "m": req.m,
                "h": req.h,
                "seed": req.seed,
            }
        )
        with self._lock:
            self.channel.send_line(payload)
            obj = self._read_json()
        if "samples" not in obj or "shape" not in obj:
            raise ProtocolError(f"response missing samples/shape: {list(obj)}")
        expected = (req.m, req.h, self.dim)
        if tuple(obj["shape"]) != expected:
            raise ProtocolError(
                f"remote declared shape {obj['shape']}, expected {list(expected)}"
            )
        arr = np.asarray(obj["samples"], dtype=float)
        if arr.shape != expected:
            raise ProtocolError(
                f"remote payload has shape {arr.shape}, declared {obj['shape']}"
            )
        if not np.all(np.isfinite(arr)):
            raise ProtocolError("remote payload contains non-finite values")
        return TrajectoryBatch(arr)

    def close(self) -> None:
        self.channel.close()

    def __enter__(self) -> "ExternalSampler":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def external_sample(req: SamplerRequest, endpoint: ExternalSampler) -> TrajectoryBatch:
    """Operation-style wrapper around ExternalSampler.sample."""
    return endpoint.sample(req)
