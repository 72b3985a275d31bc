"""Oracle backend that talks to a long-running worker process.

The worker reads one JSON object per line on stdin::

    {"request_id": 7, "template": {"depth": 3, ...}, "instance_seed": 123}

and answers with one JSON object per line on stdout, in any order::

    {"request_id": 7, "correct": false}
    {"request_id": 8, "metrics": {"accuracy": 0.5}}
    {"request_id": 9, "failure": "unparseable"}

Up to ``parallelism`` requests are in flight at once.  A request without an
answer after ``timeout`` seconds becomes a ``timeout`` outcome (a late answer
is dropped); an answer that does not fit the schema becomes
``generation_failure``.  If the worker exits while requests are pending the
backend raises :class:`BackendError`.
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import threading
import time
from typing import Sequence

from weakspot.oracle import Backend, BackendError, Outcome, instance_seeds, template_key
from weakspot.space import SpaceSpec, TemplateId

COMMAND_ENV = "WEAKSPOT_BACKEND_COMMAND"
PARALLELISM_ENV = "WEAKSPOT_PARALLELISM"
DEFAULT_TIMEOUT = 120.0


def _plain(value):
    """JSON-safe scalar (numpy ints/floats become Python numbers)."""
    if hasattr(value, "item"):
        return value.item()
    return value


def parse_response(record: dict) -> Outcome:
    """Outcome from one worker answer; schema problems become generation failures."""
    try:
        failure = record.get("failure")
        correct = record.get("correct")
        metrics = record.get("metrics") or {}
        if correct is not None and not isinstance(correct, bool):
            raise ValueError("correct must be a boolean")
        if not isinstance(metrics, dict):
            raise ValueError("metrics must be an object")
        metrics = {str(k): float(v) for k, v in metrics.items()}
        if failure is None and correct is None and "accuracy" not in metrics:
            raise ValueError("answer has neither correct, accuracy nor failure")
        return Outcome(correct, metrics, failure)
    except (TypeError, ValueError):
        return Outcome(failure="generation_failure")


class ExternalBackend(Backend):
    """Line-delimited JSON request/response oracle over a subprocess."""

    def __init__(
        self,
        command: str | Sequence[str] | None,
        space: SpaceSpec,
        seed: int = 0,
        timeout: float = DEFAULT_TIMEOUT,
        parallelism: int = 20,
    ):
        command = command or os.environ.get(COMMAND_ENV)
        if not command:
            raise BackendError(f"no worker command configured (set backend.command or {COMMAND_ENV})")
        if isinstance(command, str):
            command = shlex.split(command)
        env_width = os.environ.get(PARALLELISM_ENV)
        self.parallelism = int(env_width) if env_width else int(parallelism)
        if self.parallelism < 1:
            raise BackendError("parallelism must be >= 1")
        self.space = space
        self.seed = int(seed)
        self.timeout = float(timeout)
        self.draws: dict[TemplateId, int] = {}
        self._next_id = 0
        self._answers: dict[int, Outcome] = {}
        self._cond = threading.Condition()
        self._dead = False
        self._abandoned: set[int] = set()
        try:
            self.proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(f"cannot start worker {command!r}: {exc}") from None
        self._reader = threading.Thread(target=self._read, daemon=True)
        self._reader.start()

    def _read(self) -> None:
        for line in self.proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                rid = int(record["request_id"])
            except (ValueError, KeyError, TypeError):
                continue  # unattributable line; the request it belonged to will time out
            with self._cond:
                if rid in self._abandoned:
                    self._abandoned.discard(rid)
                    continue
                self._answers[rid] = parse_response(record)
                self._cond.notify_all()
        with self._cond:
            self._dead = True
            self._cond.notify_all()

    def _send(self, tid: TemplateId) -> int:
        k = self.draws.get(tid, 0)
        self.draws[tid] = k + 1
        rid = self._next_id
        self._next_id += 1
        request = {
            "request_id": rid,
            "template": {name: _plain(v) for name, v in zip(self.space.names, tid)},
            "instance_seed": instance_seeds(self.seed, [template_key(tid)], [k])[0],
        }
        try:
            self.proc.stdin.write(json.dumps(request) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise BackendError("worker process is not accepting requests") from None
        return rid

    def evaluate_many(self, tids: Sequence[TemplateId]) -> list[Outcome]:
        results: list[Outcome | None] = [None] * len(tids)
        pending: dict[int, tuple[int, float]] = {}  # request id -> (slot, deadline)
        cursor = 0
        while cursor < len(tids) or pending:
            while cursor < len(tids) and len(pending) < self.parallelism:
                pending[self._send(tids[cursor])] = (cursor, time.monotonic() + self.timeout)
                cursor += 1
            with self._cond:
                while True:
                    done = [rid for rid in pending if rid in self._answers]
                    now = time.monotonic()
                    expired = [rid for rid, (_, dl) in pending.items() if dl <= now and rid not in self._answers]
                    if done or expired:
                        break
                    if self._dead:
                        raise BackendError(f"worker exited with {len(pending)} request(s) outstanding")
                    self._cond.wait(min(dl for _, dl in pending.values()) - now)
                for rid in done:
                    results[pending.pop(rid)[0]] = self._answers.pop(rid)
                self._abandoned.update(expired)
            for rid in expired:
                results[pending.pop(rid)[0]] = Outcome(failure="timeout")
        return results

    def get_state(self) -> dict:
        return {"draws": list(self.draws.items())}

    def set_state(self, state: dict) -> None:
        self.draws = {tuple(k): v for k, v in state.get("draws", [])}

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
