"""Evaluation outcomes, utility functions and in-process oracle backends.

Backends turn a template identifier into an :class:`Outcome`; a
:class:`UtilitySpec` turns an outcome into a scalar in [0, 1].  Timeouts,
generation failures and unparseable answers map to utility 0 by default so the
optimizer never chases them.
"""

from __future__ import annotations

import ast
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from weakspot.space import SpaceSpec, TemplateId

FAILURE_KINDS = ("timeout", "generation_failure", "unparseable")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class BackendError(RuntimeError):
    """The backend cannot continue (dead worker process, exhausted script, ...)."""


class ScriptExhausted(BackendError):
    pass


class UtilityError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Outcome:
    correct: bool | None = None
    metrics: dict = field(default_factory=dict)
    failure: str | None = None

    def __post_init__(self):
        if self.failure is not None and self.failure not in FAILURE_KINDS:
            raise ValueError(f"unknown failure tag {self.failure!r}")
        for key, value in self.metrics.items():
            if not math.isfinite(value):
                raise ValueError(f"metric {key!r} is not finite")

    def to_dict(self) -> dict:
        out = {}
        if self.correct is not None:
            out["correct"] = self.correct
        if self.metrics:
            out["metrics"] = dict(self.metrics)
        if self.failure is not None:
            out["failure"] = self.failure
        return out

    @classmethod
    def from_dict(cls, data: dict) -> Outcome:
        return cls(data.get("correct"), dict(data.get("metrics") or {}), data.get("failure"))


# --------------------------------------------------------------------------
# utilities
# --------------------------------------------------------------------------

_FUNCS = {
    "min": min,
    "max": max,
    "abs": abs,
    "log": math.log,
    "log2": math.log2,
    "sqrt": math.sqrt,
}
_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


def _arith(node: ast.AST, env: dict) -> float:
    if isinstance(node, ast.Expression):
        return _arith(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id not in env:
            raise UtilityError(f"unknown name {node.id!r} in utility expression")
        return float(env[node.id])
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        return -_arith(node.operand, env)
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_arith(node.left, env), _arith(node.right, env))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        return float(_FUNCS[node.func.id](*(_arith(arg, env) for arg in node.args)))
    raise UtilityError(f"unsupported syntax in utility expression: {type(node).__name__}")


@dataclass(frozen=True)
class UtilitySpec:
    """How outcomes map to utility.

    ``kind`` is ``error_rate``, ``complexity_weighted_error`` or
    ``custom_expression``.  Custom expressions see every metric, every
    numeric template parameter, ``error`` (1 − accuracy) and ``failed``
    (0/1); set ``failure_utility`` to None to let them see failures.
    """

    kind: str = "error_rate"
    expression: str | None = None
    depth_param: str = "depth"
    children_param: str = "children"
    failure_utility: float | None = 0.0

    def __post_init__(self):
        if self.kind not in ("error_rate", "complexity_weighted_error", "custom_expression"):
            raise UtilityError(f"unknown utility kind {self.kind!r}")
        if self.kind == "custom_expression" and not self.expression:
            raise UtilityError("custom_expression needs an expression")

    @classmethod
    def from_dict(cls, data: dict | str | None) -> UtilitySpec:
        if data is None:
            return cls()
        if isinstance(data, str):
            return cls(kind=data)
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "expression": self.expression,
            "depth_param": self.depth_param,
            "children_param": self.children_param,
            "failure_utility": self.failure_utility,
        }


def _accuracy(outcome: Outcome) -> float:
    if outcome.correct is not None:
        return 1.0 if outcome.correct else 0.0
    if "accuracy" in outcome.metrics:
        return float(outcome.metrics["accuracy"])
    raise UtilityError("outcome carries neither 'correct' nor an 'accuracy' metric")


def complexity_log(depth: float, children: float) -> float:
    """log2(children ** depth), computed without forming the power."""
    if depth <= 0 or children <= 1:
        raise UtilityError(f"complexity-weighted error undefined for depth={depth}, children={children}")
    return depth * math.log2(children)


def utility(spec: UtilitySpec, outcome: Outcome, tid: TemplateId, space: SpaceSpec | None = None) -> float:
    """Scalar utility in [0, 1] for one outcome."""
    if outcome.failure is not None and spec.failure_utility is not None:
        return float(spec.failure_utility)
    if spec.kind == "error_rate":
        return 1.0 - _accuracy(outcome)
    values = space.named(tid) if space is not None else {}
    if spec.kind == "complexity_weighted_error":
        try:
            depth = values[spec.depth_param]
            children = values[spec.children_param]
        except KeyError as exc:
            raise UtilityError(f"space lacks parameter {exc.args[0]!r} for complexity weighting") from None
        value = (1.0 - _accuracy(outcome)) / complexity_log(depth, children)
        return min(1.0, max(0.0, value))
    env = {k: v for k, v in values.items() if isinstance(v, (int, float)) and not isinstance(v, bool)}
    env.update(outcome.metrics)
    env["failed"] = 0.0 if outcome.failure is None else 1.0
    if outcome.correct is not None or "accuracy" in outcome.metrics:
        env["error"] = 1.0 - _accuracy(outcome)
    try:
        value = _arith(ast.parse(spec.expression, mode="eval"), env)
    except (ZeroDivisionError, OverflowError, ValueError) as exc:
        if isinstance(exc, UtilityError):
            raise
        raise UtilityError(f"utility expression failed: {exc}") from None
    if not math.isfinite(value):
        raise UtilityError(f"utility expression produced {value}")
    return min(1.0, max(0.0, value))


# --------------------------------------------------------------------------
# counter-based randomness
# --------------------------------------------------------------------------


def template_key(tid: TemplateId) -> int:
    """Stable 64-bit key for an identifier (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.blake2b(repr(tid).encode(), digest_size=8).digest(), "little")


@numba.njit(cache=True)
def _mix64(x):
    x = x ^ (x >> np.uint64(30))
    x = x * _MIX1
    x = x ^ (x >> np.uint64(27))
    x = x * _MIX2
    return x ^ (x >> np.uint64(31))


@numba.njit(cache=True)
def _keyed(seed, keys, indices):
    s = _mix64(seed + _GOLDEN)
    out = np.empty(keys.shape[0])
    for j in range(keys.shape[0]):
        x = _mix64(keys[j] ^ s)
        x = _mix64(x + (indices[j] + np.uint64(1)) * _GOLDEN)
        out[j] = (x >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return out


def keyed_uniforms(seed: int, keys: Sequence[int], indices: Sequence[int]) -> np.ndarray:
    """Uniform [0, 1) draws addressed by ``(seed, key, index)``.

    Each triple always yields the same number, so outcomes do not depend on
    dispatch order or on how evaluations are grouped into batches.
    """
    k = np.asarray(keys, dtype=np.uint64).reshape(-1)
    i = np.asarray(indices, dtype=np.uint64).reshape(-1)
    return _keyed(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), k, i)


def instance_seeds(seed: int, keys: Sequence[int], indices: Sequence[int]) -> list[int]:
    u = keyed_uniforms(seed ^ 0x5EED, keys, indices)
    return [int(v * 2**53) for v in u]


# --------------------------------------------------------------------------
# backends
# --------------------------------------------------------------------------


class Backend:
    """Base class.  Subclasses implement :meth:`evaluate_many`."""

    def evaluate(self, tid: TemplateId) -> Outcome:
        return self.evaluate_many([tid])[0]

    def evaluate_many(self, tids: Sequence[TemplateId]) -> list[Outcome]:
        raise NotImplementedError

    def get_state(self) -> dict:
        return {}

    def set_state(self, state: dict) -> None:
        pass

    def close(self) -> None:
        pass


class SyntheticBackend(Backend):
    """Bernoulli correctness with P(incorrect) = ``mean_fn(tid)``.

    Error-rate utility therefore has mean ``mean_fn(tid)``.  Draw ``k`` for a
    given identifier is a pure function of ``(seed, tid, k)``.
    """

    def __init__(self, mean_fn: Callable[[TemplateId], float], seed: int = 0):
        self.mean_fn = mean_fn
        self.seed = int(seed)
        self.draws: dict[TemplateId, int] = {}
        self._keys: dict[TemplateId, int] = {}
        self._means: dict[TemplateId, float] = {}

    def mean(self, tid: TemplateId) -> float:
        value = self._means.get(tid)
        if value is None:
            value = float(self.mean_fn(tid))
            if not 0.0 <= value <= 1.0:
                raise BackendError(f"mean function returned {value} for {tid!r}")
            self._means[tid] = value
        return value

    def key(self, tid: TemplateId) -> int:
        value = self._keys.get(tid)
        if value is None:
            value = self._keys[tid] = template_key(tid)
        return value

    def error_draws(self, tids: Sequence[TemplateId]) -> np.ndarray:
        """Vectorized path: boolean array, True where the draw is an error."""
        keys = []
        indices = []
        for tid in tids:
            k = self.draws.get(tid, 0)
            self.draws[tid] = k + 1
            keys.append(self.key(tid))
            indices.append(k)
        u = keyed_uniforms(self.seed, keys, indices)
        means = np.fromiter((self.mean(t) for t in tids), dtype=np.float64, count=len(tids))
        return u < means

    def evaluate_many(self, tids: Sequence[TemplateId]) -> list[Outcome]:
        return [Outcome(correct=not bool(e)) for e in self.error_draws(tids)]

    def get_state(self) -> dict:
        return {"draws": list(self.draws.items())}

    def set_state(self, state: dict) -> None:
        self.draws = {tuple(k): v for k, v in state.get("draws", [])}


class ScriptedBackend(Backend):
    """Replays recorded outcomes per identifier, in order."""

    def __init__(self, table: dict[TemplateId, Iterable[Outcome]]):
        self.table = {tid: list(outcomes) for tid, outcomes in table.items()}
        self.cursor: dict[TemplateId, int] = {}

    def evaluate_many(self, tids: Sequence[TemplateId]) -> list[Outcome]:
        out = []
        for tid in tids:
            k = self.cursor.get(tid, 0)
            recorded = self.table.get(tid, ())
            if k >= len(recorded):
                raise ScriptExhausted(f"no recorded outcome #{k} for {tid!r}")
            self.cursor[tid] = k + 1
            out.append(recorded[k])
        return out

    def get_state(self) -> dict:
        return {"cursor": list(self.cursor.items())}

    def set_state(self, state: dict) -> None:
        self.cursor = {tuple(k): v for k, v in state.get("cursor", [])}


def evaluate(backend: Backend, tid: TemplateId) -> Outcome:
    return backend.evaluate(tid)
