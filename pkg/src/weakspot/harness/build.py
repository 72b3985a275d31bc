"""Turn the plain-dict parts of a :class:`RunConfig` into live objects."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import yaml

from weakspot import presets
from weakspot.config import ConfigError, RunConfig
from weakspot.external import DEFAULT_TIMEOUT, ExternalBackend
from weakspot.oracle import Backend, Outcome, ScriptedBackend, SyntheticBackend
from weakspot.space import SpaceError, SpaceSpec, validate_space

REEVAL_STREAM = 0x5EE7A1


def load_config(path: str | Path) -> RunConfig:
    """Read a YAML or JSON config file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(data)


def environment_for(config: RunConfig) -> presets.Environment | None:
    spec = config.backend
    if spec.get("kind", "synthetic") != "synthetic":
        return None
    name = spec.get("environment", "needles")
    try:
        return presets.environment(name, **spec.get("options", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def build_space(config: RunConfig) -> SpaceSpec:
    spec = config.space
    try:
        if "params" in spec:
            space = SpaceSpec.from_dict(spec)
        else:
            name = spec.get("preset", "needles")
            if name in presets.SPACES:
                space = presets.SPACES[name]()
            elif name in presets.ENVIRONMENTS:
                env = environment_for(config)
                space = env.space if env is not None and env.name == name else presets.environment(name).space
            else:
                raise ConfigError(f"unknown space preset {name!r}")
    except (SpaceError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad space definition: {exc}") from None
    problems = validate_space(space)
    if problems:
        raise ConfigError("; ".join(problems))
    return space


def _scripted_table(spec: dict) -> dict:
    table = spec.get("table")
    if isinstance(table, str):
        table = json.loads(Path(table).read_text())
    if not isinstance(table, list):
        raise ConfigError("scripted backend needs a table: list of {id, outcomes}")
    return {tuple(row["id"]): [Outcome.from_dict(o) for o in row["outcomes"]] for row in table}


def build_backend(config: RunConfig, space: SpaceSpec, stream: int = 0) -> Backend:
    """Backend for the run (``stream`` 0) or for re-evaluation (a disjoint seed stream)."""
    spec = config.backend
    kind = spec.get("kind", "synthetic")
    seed = int(np.random.SeedSequence([config.seed, stream]).generate_state(1)[0]) if stream else config.seed
    if kind == "synthetic":
        env = environment_for(config)
        return SyntheticBackend(env.mean_fn, seed)
    if kind == "scripted":
        return ScriptedBackend(_scripted_table(spec))
    if kind == "external":
        return ExternalBackend(
            spec.get("command"),
            space,
            seed=seed,
            timeout=float(spec.get("timeout", DEFAULT_TIMEOUT)),
            parallelism=config.parallelism,
        )
    raise ConfigError(f"unknown backend kind {kind!r}")
