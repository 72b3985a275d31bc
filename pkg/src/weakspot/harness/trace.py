"""Append-only JSON-lines run trace.

Line 1 is a header carrying the format version and the full config; every
further line is one event.  Events are stamped with logical time (sequence
number, batch step, budget used) rather than wall-clock time, so two runs of
the same config produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import IO, Iterator

FORMAT_VERSION = 1


class TraceError(RuntimeError):
    pass


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


class Trace:
    """In-memory event list, optionally mirrored line by line to a file."""

    def __init__(self, header: dict, path: str | Path | None = None, append: bool = False):
        self.header = {"format_version": FORMAT_VERSION, **header}
        self.events: list[dict] = []
        self.path = Path(path) if path is not None else None
        self._fh: IO[str] | None = None
        self._clock = None
        if self.path is not None:
            if append:
                self._fh = self.path.open("a")
            else:
                self._fh = self.path.open("w")
                self._fh.write(dumps(self.header) + "\n")
                self._fh.flush()

    def bind(self, clock) -> Trace:
        """Use ``clock()`` -> (step, budget_used) to stamp subsequent events."""
        self._clock = clock
        return self

    def sink(self, kind: str, fields: dict) -> None:
        step, budget = self._clock() if self._clock else (0, 0)
        record = {"seq": len(self.events), "step": step, "budget": budget, "kind": kind, **fields}
        self.events.append(record)
        if self._fh is not None:
            self._fh.write(dumps(record) + "\n")

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    def text(self) -> str:
        return "".join(dumps(r) + "\n" for r in [self.header, *self.events])


def iter_lines(path: str | Path) -> Iterator[dict]:
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def read_trace(path: str | Path) -> Trace:
    path = Path(path)
    if not path.exists():
        raise TraceError(f"trace file {path} not found")
    lines = iter_lines(path)
    try:
        header = next(lines)
    except StopIteration:
        raise TraceError(f"trace file {path} is empty") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise TraceError(f"trace format {header.get('format_version')} is not supported (expected {FORMAT_VERSION})")
    trace = Trace({k: v for k, v in header.items() if k != "format_version"})
    trace.events = list(lines)
    return trace


def file_digest(path: str | Path, length: int | None = None) -> str:
    data = Path(path).read_bytes()
    if length is not None:
        data = data[:length]
    return hashlib.sha256(data).hexdigest()
