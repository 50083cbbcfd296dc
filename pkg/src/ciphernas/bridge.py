"""Wire protocol to an external trainer process.

Newline-delimited JSON over the child's standard streams; one in-flight
request per process (parallelism comes from a pool of processes, each
owned by one evaluation worker).  Message kinds:

    -> {"id", "kind": "train"|"eval"|"shutdown", "net": <network schema>,
        "dataset", "weights_id"?}
    <- {"id", "kind": "result", "A", "weights_id", "trained"}
     | {"id", "kind": "error", "message"}

A train request (sw_flag on) trains from scratch; an eval request
(sw_flag off) reuses stored float weights under new quantizers and
therefore requires a weights_id.
"""
from __future__ import annotations

import json
import select
import subprocess
import time
from dataclasses import dataclass
from typing import Optional

from .model import Network, network_from_dict, network_to_dict

DATASET_TAGS = ("mnist", "fashion-mnist", "cifar10", "surrogate")


class TrainerError(RuntimeError):
    """Base of the three distinct failure modes."""


class TrainerTimeout(TrainerError):
    pass


class TrainerProtocolError(TrainerError):
    pass


class TrainerFailure(TrainerError):
    """Error reported by the trainer itself."""


@dataclass(frozen=True)
class AccuracyRequest:
    net: Network
    dataset: str
    weights_id: Optional[str] = None

    def check(self) -> None:
        if self.dataset not in DATASET_TAGS:
            raise TrainerProtocolError(f"unknown dataset tag {self.dataset!r}")
        if not self.net.sw_flag and not self.weights_id:
            raise TrainerProtocolError(
                "reuse request (sw_flag off) requires a weights_id")

    def to_message(self, msg_id: int) -> dict:
        self.check()
        msg = {
            "id": msg_id,
            "kind": "train" if self.net.sw_flag else "eval",
            "net": network_to_dict(self.net),
            "dataset": self.dataset,
        }
        if self.weights_id is not None:
            msg["weights_id"] = self.weights_id
        return msg


@dataclass(frozen=True)
class AccuracyResponse:
    A: float
    weights_id: Optional[str]
    trained: bool

    def check(self, request: AccuracyRequest) -> None:
        if not 0.0 <= self.A <= 1.0:
            raise TrainerProtocolError(f"accuracy {self.A} outside [0, 1]")
        if self.trained != request.net.sw_flag:
            raise TrainerProtocolError(
                f"trained={self.trained} does not match request sw_flag={request.net.sw_flag}")


class TrainerClient:
    """Owns one trainer child process."""

    def __init__(self, cmd, timeout: float = 600.0):
        self.cmd = list(cmd)
        self.timeout = timeout
        self._proc: Optional[subprocess.Popen] = None
        self._next_id = 0

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        return self._proc

    def _read_line(self, proc: subprocess.Popen, deadline: float) -> str:
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TrainerTimeout(f"no response within {self.timeout}s")
            ready, _, _ = select.select([proc.stdout], [], [], min(remaining, 1.0))
            if ready:
                line = proc.stdout.readline()
                if line == "":
                    raise TrainerProtocolError("trainer closed its output stream")
                if line.strip():
                    return line
            elif proc.poll() is not None:
                raise TrainerProtocolError(
                    f"trainer exited with code {proc.returncode}")

    def query(self, request: AccuracyRequest) -> AccuracyResponse:
        """One request, exactly one response or one error; ids are unique
        and must be echoed."""
        self._next_id += 1
        msg_id = self._next_id
        msg = request.to_message(msg_id)
        proc = self._ensure_proc()
        try:
            proc.stdin.write(json.dumps(msg) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise TrainerProtocolError(f"cannot write to trainer: {e}") from None
        line = self._read_line(proc, time.monotonic() + self.timeout)
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as e:
            raise TrainerProtocolError(f"malformed trainer reply: {e.msg}") from None
        if reply.get("id") != msg_id:
            raise TrainerProtocolError(
                f"id mismatch: sent {msg_id}, got {reply.get('id')!r}")
        kind = reply.get("kind")
        if kind == "error":
            raise TrainerFailure(str(reply.get("message", "unspecified trainer error")))
        if kind != "result":
            raise TrainerProtocolError(f"unexpected reply kind {kind!r}")
        for field in ("A", "weights_id", "trained"):
            if field not in reply:
                raise TrainerProtocolError(f"reply missing field {field!r}")
        resp = AccuracyResponse(A=float(reply["A"]), weights_id=reply["weights_id"],
                                trained=bool(reply["trained"]))
        resp.check(request)
        return resp

    def shutdown(self) -> None:
        if self._proc is None:
            return
        proc, self._proc = self._proc, None
        if proc.poll() is None:
            try:
                self._next_id += 1
                proc.stdin.write(json.dumps({"id": self._next_id, "kind": "shutdown"}) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError):
                pass
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
