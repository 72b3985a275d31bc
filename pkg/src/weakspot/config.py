"""Run configuration and policy records."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from weakspot.oracle import UtilitySpec
from weakspot.surrogate import ForestParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CertPolicy:
    kind: str = "none"  # none | fixed | adaptive
    tau: float = 0.9
    floor: float = 0.01  # adaptive only: smallest gap used by the sample-count model
    grid: int = 201  # adaptive only: thresholds scanned per raise

    def __post_init__(self):
        if self.kind not in ("none", "fixed", "adaptive"):
            raise ConfigError(f"unknown certification kind {self.kind!r}")
        if self.kind != "none" and not 0 < self.tau < 1:
            raise ConfigError(f"certification threshold must lie in (0, 1), got {self.tau}")


@dataclass(frozen=True)
class RepulsionPolicy:
    enabled: bool = False
    lam: float = 0.1
    epsilon_ref: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or self.epsilon_ref < 0:
            raise ConfigError("repulsion weight and reference tolerance must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run.

    ``space`` and ``backend`` are plain dicts (see :mod:`weakspot.harness.build`)
    so the whole config serializes to JSON and hashes stably.
    """

    space: dict = field(default_factory=lambda: {"preset": "needles"})
    backend: dict = field(default_factory=lambda: {"kind": "synthetic", "environment": "needles"})
    utility: UtilitySpec = field(default_factory=UtilitySpec)
    budget_total: int = 20_000
    batch_size: int = 20
    n0: int = 50
    delta: float = 0.01
    c: float = 1.0
    exploration: float = 1.0  # accepted for compatibility; no role in the update rules
    random_exploration: float = 0.5
    candidate_pool: int = 64
    max_redraws: int = 200
    surrogate: bool = True
    forest: ForestParams = field(default_factory=ForestParams)
    cert: CertPolicy = field(default_factory=CertPolicy)
    repulsion: RepulsionPolicy = field(default_factory=RepulsionPolicy)
    schedule: str = "expected"  # expected | pessimistic
    seed: int = 0
    parallelism: int = 20
    reevaluation_min_samples: int = 200
    reevaluation_top_k: int = 100

    def __post_init__(self):
        errors = []
        if self.batch_size < 2 or self.batch_size % 2:
            errors.append(f"batch size must be even and >= 2, got {self.batch_size}")
        if not 0 < self.delta < 1:
            errors.append(f"delta must lie in (0, 1), got {self.delta}")
        if self.n0 < 1:
            errors.append("n0 must be >= 1")
        if self.budget_total < self.n0 and self.budget_total != 0:
            errors.append(f"budget_total ({self.budget_total}) must be >= n0 ({self.n0})")
        if self.c < 0:
            errors.append("expansion constant c must be >= 0")
        if not 0 <= self.random_exploration <= 1:
            errors.append("random_exploration must lie in [0, 1]")
        if self.schedule not in ("expected", "pessimistic"):
            errors.append(f"unknown schedule mode {self.schedule!r}")
        if self.parallelism < 1:
            errors.append("parallelism must be >= 1")
        if errors:
            raise ConfigError("; ".join(errors))

    @property
    def bounds_delta(self) -> float:
        return self.delta / 2

    @property
    def gamma_delta(self) -> float:
        return self.delta / 2

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["utility"] = self.utility.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        try:
            if "utility" in data:
                data["utility"] = UtilitySpec.from_dict(data["utility"])
            if isinstance(data.get("forest"), dict):
                data["forest"] = ForestParams(**data["forest"])
            if isinstance(data.get("cert"), dict):
                data["cert"] = CertPolicy(**data["cert"])
            if isinstance(data.get("repulsion"), dict):
                rep = dict(data["repulsion"])
                if "lambda" in rep:
                    rep["lam"] = rep.pop("lambda")
                data["repulsion"] = RepulsionPolicy(**rep)
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
