"""Parameterized template spaces: validation, counting, uniform sampling, encoding.

A template identifier is a plain tuple holding one value per parameter, in
declaration order.  Categorical values are strings, integer values are ints and
continuous values are floats, so identifiers hash, compare and serialize to
JSON without any wrapping.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterator, Sequence

import numpy as np

from weakspot.constraints import Constraint, ConstraintSyntaxError, parse_constraint

TemplateId = tuple

CATEGORICAL = "categorical"
INTEGER = "int"
CONTINUOUS = "float"
KINDS = (CATEGORICAL, INTEGER, CONTINUOUS)

DEFAULT_ENUMERATION_CAP = 10**7
DEFAULT_MAX_ATTEMPTS = 10_000


class SpaceError(ValueError):
    """Invalid space definition or an identifier that does not belong to a space."""


class InfeasibleSpaceError(SpaceError):
    """Rejection sampling gave up; the constraint set is (nearly) unsatisfiable."""


@dataclass(frozen=True)
class ParamSpec:
    """One parameter of a template space.

    Use the ``categorical``, ``integer`` and ``continuous`` constructors rather
    than filling the fields by hand.
    """

    name: str
    kind: str
    levels: tuple[str, ...] = ()
    lo: float = 0
    hi: float = 0

    @classmethod
    def categorical(cls, name: str, levels: Sequence[str]) -> ParamSpec:
        return cls(name, CATEGORICAL, levels=tuple(str(level) for level in levels))

    @classmethod
    def integer(cls, name: str, lo: int, hi: int) -> ParamSpec:
        return cls(name, INTEGER, lo=int(lo), hi=int(hi))

    @classmethod
    def continuous(cls, name: str, lo: float, hi: float) -> ParamSpec:
        return cls(name, CONTINUOUS, lo=float(lo), hi=float(hi))

    @property
    def discrete(self) -> bool:
        return self.kind != CONTINUOUS

    @property
    def cardinality(self) -> int:
        if self.kind == CATEGORICAL:
            return len(self.levels)
        if self.kind == INTEGER:
            return max(0, int(self.hi) - int(self.lo) + 1)
        raise SpaceError(f"continuous parameter {self.name!r} has no cardinality")

    @property
    def width(self) -> int:
        """Number of feature columns this parameter occupies."""
        return len(self.levels) if self.kind == CATEGORICAL else 1

    def domain(self) -> np.ndarray:
        if self.kind == CATEGORICAL:
            return np.array(self.levels)
        return np.arange(int(self.lo), int(self.hi) + 1)

    def contains(self, value: Any) -> bool:
        if self.kind == CATEGORICAL:
            return isinstance(value, str) and value in self.levels
        if isinstance(value, bool):
            return False
        if self.kind == INTEGER:
            return isinstance(value, (int, np.integer)) and self.lo <= value <= self.hi
        return isinstance(value, (int, float, np.floating)) and self.lo <= value <= self.hi

    def draw(self, rng: np.random.Generator):
        if self.kind == CATEGORICAL:
            return self.levels[int(rng.integers(len(self.levels)))]
        if self.kind == INTEGER:
            return int(rng.integers(int(self.lo), int(self.hi) + 1))
        return float(rng.uniform(self.lo, self.hi))

    def to_dict(self) -> dict:
        if self.kind == CATEGORICAL:
            return {"name": self.name, "kind": self.kind, "levels": list(self.levels)}
        return {"name": self.name, "kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class SpaceSpec:
    """An ordered list of parameters plus a conjunction of constraint strings."""

    params: tuple[ParamSpec, ...]
    constraints: tuple[str, ...] = ()
    name: str = field(default="space", compare=False)

    @classmethod
    def from_dict(cls, data: dict) -> SpaceSpec:
        params = []
        for entry in data.get("params", []):
            kind = entry.get("kind")
            if kind == CATEGORICAL:
                params.append(ParamSpec.categorical(entry["name"], entry.get("levels", [])))
            elif kind in (INTEGER, "integer"):
                params.append(ParamSpec.integer(entry["name"], entry["lo"], entry["hi"]))
            elif kind in (CONTINUOUS, "continuous"):
                params.append(ParamSpec.continuous(entry["name"], entry["lo"], entry["hi"]))
            else:
                raise SpaceError(f"unknown parameter kind {kind!r}")
        return cls(tuple(params), tuple(data.get("constraints", [])), name=data.get("name", "space"))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": [p.to_dict() for p in self.params],
            "constraints": list(self.constraints),
        }

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    @cached_property
    def parsed(self) -> tuple[Constraint, ...]:
        return tuple(parse_constraint(text) for text in self.constraints)

    @cached_property
    def feature_width(self) -> int:
        return sum(p.width for p in self.params)

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    def named(self, tid: TemplateId) -> dict:
        return dict(zip(self.names, tid))

    def satisfies(self, tid: TemplateId) -> bool:
        values = self.named(tid)
        return all(c.holds(values) for c in self.parsed)

    def contains(self, tid: TemplateId) -> bool:
        if len(tid) != len(self.params):
            return False
        if not all(p.contains(v) for p, v in zip(self.params, tid)):
            return False
        return self.satisfies(tid)

    def coerce(self, values: Sequence | dict) -> TemplateId:
        """Build an identifier from a sequence or name→value mapping (e.g. parsed JSON)."""
        if isinstance(values, dict):
            try:
                values = [values[name] for name in self.names]
            except KeyError as exc:
                raise SpaceError(f"missing parameter {exc.args[0]!r}") from None
        if len(values) != len(self.params):
            raise SpaceError(f"expected {len(self.params)} values, got {len(values)}")
        out = []
        for p, v in zip(self.params, values):
            if p.kind == INTEGER and isinstance(v, float) and v.is_integer():
                v = int(v)
            elif p.kind == CONTINUOUS and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            out.append(v)
        tid = tuple(out)
        if not self.contains(tid):
            raise SpaceError(f"{tid!r} is not a valid template of {self.name!r}")
        return tid


def validate_space(space: SpaceSpec, cap: int = DEFAULT_ENUMERATION_CAP) -> list[str]:
    """Return every invariant violation found in ``space``; empty means valid."""
    errors = []
    seen = set()
    for p in space.params:
        if p.name in seen:
            errors.append(f"duplicate parameter name {p.name!r}")
        seen.add(p.name)
        if p.kind not in KINDS:
            errors.append(f"parameter {p.name!r}: unknown kind {p.kind!r}")
        elif p.kind == CATEGORICAL:
            if not p.levels:
                errors.append(f"parameter {p.name!r}: empty categorical")
            elif len(set(p.levels)) != len(p.levels):
                errors.append(f"parameter {p.name!r}: repeated categorical level")
        elif p.lo > p.hi:
            errors.append(f"parameter {p.name!r}: inverted range [{p.lo}, {p.hi}]")
        elif not (math.isfinite(p.lo) and math.isfinite(p.hi)):
            errors.append(f"parameter {p.name!r}: non-finite bound")
    parsed_ok = True
    for text in space.constraints:
        try:
            constraint = parse_constraint(text)
        except ConstraintSyntaxError as exc:
            errors.append(f"constraint {text!r}: {exc}")
            parsed_ok = False
            continue
        unknown = sorted(constraint.names - seen)
        if unknown:
            errors.append(f"constraint {text!r} references unknown name(s) {', '.join(unknown)}")
            parsed_ok = False
    if not errors and parsed_ok and space.params:
        try:
            if _discrete_product(space) <= cap and not _constraints_touch_continuous(space):
                if count_discrete(space, cap) == 0:
                    errors.append("no assignment satisfies the constraints")
            else:
                sample_uniform(space, np.random.default_rng(0))
        except InfeasibleSpaceError:
            errors.append("no assignment satisfies the constraints")
    elif not space.params:
        errors.append("space declares no parameters")
    return errors


def ensure_valid(space: SpaceSpec) -> SpaceSpec:
    errors = validate_space(space)
    if errors:
        raise SpaceError("; ".join(errors))
    return space


def _discrete_product(space: SpaceSpec) -> int:
    return math.prod(p.cardinality for p in space.params if p.discrete)


def _constraints_touch_continuous(space: SpaceSpec) -> bool:
    continuous = {p.name for p in space.params if not p.discrete}
    return any(c.names & continuous for c in space.parsed)


def _discrete_blocks(space: SpaceSpec, block: int) -> Iterator[dict[str, np.ndarray]]:
    discrete = [p for p in space.params if p.discrete]
    domains = [p.domain() for p in discrete]
    shape = tuple(len(d) for d in domains)
    total = math.prod(shape)
    for start in range(0, total, block):
        flat = np.arange(start, min(start + block, total))
        idx = np.unravel_index(flat, shape)
        yield {p.name: d[i] for p, d, i in zip(discrete, domains, idx)}


def count_discrete(space: SpaceSpec, cap: int = DEFAULT_ENUMERATION_CAP, block: int = 200_000) -> int:
    """Count discrete assignments that satisfy every constraint, by enumeration.

    Continuous parameters are left out of the count.  Raises :class:`SpaceError`
    when the unconstrained discrete product exceeds ``cap``.
    """
    product = _discrete_product(space)
    if product > cap:
        raise SpaceError(f"discrete product {product} exceeds enumeration cap {cap}")
    if _constraints_touch_continuous(space):
        raise SpaceError("constraints reference continuous parameters; discrete count is undefined")
    if not space.parsed:
        return product
    count = 0
    for columns in _discrete_blocks(space, block):
        mask = np.ones(len(next(iter(columns.values()))), dtype=bool)
        for c in space.parsed:
            mask &= c.holds_many(columns)
        count += int(mask.sum())
    return count


def enumerate_discrete(space: SpaceSpec) -> Iterator[TemplateId]:
    """Yield every valid identifier of a purely discrete space, in product order."""
    if any(not p.discrete for p in space.params):
        raise SpaceError("enumeration needs a purely discrete space")
    for combo in itertools.product(*(p.domain().tolist() for p in space.params)):
        if space.satisfies(combo):
            yield combo


def sample_uniform(
    space: SpaceSpec, rng: np.random.Generator, max_attempts: int = DEFAULT_MAX_ATTEMPTS
) -> TemplateId:
    """Draw one constraint-satisfying identifier uniformly by rejection."""
    params = space.params
    constraints = space.parsed
    for _ in range(max_attempts):
        tid = tuple(p.draw(rng) for p in params)
        if not constraints:
            return tid
        values = dict(zip(space.names, tid))
        if all(c.holds(values) for c in constraints):
            return tid
    raise InfeasibleSpaceError(f"no valid template after {max_attempts} attempts in {space.name!r}")


def encode_features(space: SpaceSpec, tid: TemplateId) -> np.ndarray:
    """Fixed-length numeric encoding: numbers pass through, categoricals one-hot."""
    if not space.contains(tid):
        raise SpaceError(f"{tid!r} is not a valid template of {space.name!r}")
    return _encode(space, tid)


def _encode(space: SpaceSpec, tid: TemplateId) -> np.ndarray:
    out = np.zeros(space.feature_width)
    col = 0
    for p, v in zip(space.params, tid):
        if p.kind == CATEGORICAL:
            out[col + p.levels.index(v)] = 1.0
        else:
            out[col] = float(v)
        col += p.width
    return out


def encode_many(space: SpaceSpec, ids: Sequence[TemplateId]) -> np.ndarray:
    """Encode many identifiers (assumed valid) into a 2-D feature matrix."""
    if not ids:
        return np.zeros((0, space.feature_width))
    return np.vstack([_encode(space, tid) for tid in ids])
