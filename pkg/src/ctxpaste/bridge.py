"""Client for out-of-process scorers speaking line-delimited JSON over stdio.

The server process prints a handshake line ``{"classes": [...], "protocol": 1}``
on startup, then answers each request line ``{"id": n, "image_path": p,
"mask": [x0, y0, x1, y1]}`` with ``{"id": n, "probs": [...]}`` (or
``{"id": n, "error": "..."}``). One JSON object per line, UTF-8. Requests may
be pipelined; responses are matched to callers by id, never by arrival order.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from typing import Sequence

from PIL import Image

from .contexts import ContextualSample
from .scorer import ScoreVector

DEFAULT_TIMEOUT = 30.0
PROTOCOL_VERSION = 1


class ProtocolError(RuntimeError):
    """The server broke the wire protocol (bad line, bad id, dead process)."""


class RemoteScoreError(RuntimeError):
    """The server answered a request with an error instead of probabilities."""


def encode_line(obj: dict) -> bytes:
    """Canonical one-line encoding: minimal separators, sorted keys."""
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8") + b"\n"


@dataclass
class _Pending:
    event: threading.Event
    response: dict | None = None


class ScorerChannel:
    """Owns one scorer subprocess and demultiplexes its responses by id."""

    def __init__(self, command: Sequence[str], timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
        )
        self._write_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._pending: dict[int, _Pending] = {}
        self._next_id = 0
        self._failure: str | None = None
        self._handshake_event = threading.Event()
        self._handshake: dict | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        if not self._handshake_event.wait(self.timeout):
            self.close()
            raise ProtocolError(f"no handshake from scorer within {self.timeout}s")
        with self._state_lock:
            if self._failure is not None:
                raise ProtocolError(self._failure)
            hs = self._handshake
        if not isinstance(hs, dict) or hs.get("protocol") != PROTOCOL_VERSION:
            self.close()
            raise ProtocolError(f"bad handshake: {hs!r}")
        classes = hs.get("classes")
        if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
            self.close()
            raise ProtocolError(f"handshake classes malformed: {classes!r}")
        self.class_names: tuple[str, ...] = tuple(classes)

    def _fail(self, message: str):
        with self._state_lock:
            if self._failure is None:
                self._failure = message
            for pending in self._pending.values():
                pending.event.set()
            self._handshake_event.set()

    def _read_loop(self):
        stream = self._proc.stdout
        assert stream is not None
        for raw in stream:
            try:
                obj = json.loads(raw.decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError):
                self._fail(f"malformed line from scorer: {raw[:200]!r}")
                return
            if not self._handshake_event.is_set():
                with self._state_lock:
                    self._handshake = obj
                self._handshake_event.set()
                continue
            if not isinstance(obj, dict) or not isinstance(obj.get("id"), int):
                self._fail(f"response without integer id: {obj!r}")
                return
            with self._state_lock:
                pending = self._pending.get(obj["id"])
                if pending is None:
                    self._failure = f"response for unknown id {obj['id']}"
                    for p in self._pending.values():
                        p.event.set()
                    return
                pending.response = obj
            pending.event.set()
        self._fail("scorer process closed its output")

    def score(self, sample: ContextualSample) -> ScoreVector:
        """Write the sample to a temp PNG, send one request, await its reply."""
        with self._state_lock:
            if self._failure is not None:
                raise ProtocolError(self._failure)
            req_id = self._next_id
            self._next_id += 1
            pending = _Pending(event=threading.Event())
            self._pending[req_id] = pending
        fd, image_path = tempfile.mkstemp(prefix="ctxscore_", suffix=".png")
        os.close(fd)
        try:
            Image.fromarray(sample.pixels, mode="RGB").save(image_path, format="PNG")
            x0, y0, x1, y1 = sample.masked_region.round()
            line = encode_line(
                {
                    "id": req_id,
                    "image_path": image_path,
                    "mask": [x0, y0, x1, y1],
                }
            )
            with self._write_lock:
                stdin = self._proc.stdin
                if stdin is None or self._proc.poll() is not None:
                    raise ProtocolError("scorer process is not running")
                try:
                    stdin.write(line)
                    stdin.flush()
                except (BrokenPipeError, OSError) as e:
                    raise ProtocolError(f"cannot write to scorer: {e}") from e
            if not pending.event.wait(self.timeout):
                raise ProtocolError(f"no response for request {req_id} within {self.timeout}s")
            with self._state_lock:
                response = pending.response
                if response is None:
                    raise ProtocolError(self._failure or "scorer channel failed")
        finally:
            with self._state_lock:
                self._pending.pop(req_id, None)
            try:
                os.unlink(image_path)
            except OSError:
                pass
        if "error" in response:
            raise RemoteScoreError(f"scorer error for request {req_id}: {response['error']}")
        probs = response.get("probs")
        if not isinstance(probs, list):
            raise ProtocolError(f"response {req_id} has no probs list")
        return ScoreVector(probs=probs)

    def close(self):
        proc = self._proc
        if proc.stdin is not None:
            try:
                proc.stdin.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.terminate()
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self) -> "ScorerChannel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def remote_score(channel: ScorerChannel, sample: ContextualSample) -> ScoreVector:
    return channel.score(sample)
