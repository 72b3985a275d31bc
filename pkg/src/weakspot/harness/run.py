"""Run orchestration: adaptive runs, the uniform baseline, re-evaluation, snapshots."""

from __future__ import annotations

import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from weakspot import __version__
from weakspot import batching as bt
from weakspot import optimizer as opt
from weakspot.config import ConfigError, RunConfig
from weakspot.harness.build import REEVAL_STREAM, build_backend, build_space
from weakspot.harness.trace import Trace, TraceError, file_digest, read_trace
from weakspot.oracle import Backend, Outcome, ScriptedBackend
from weakspot.space import SpaceSpec, sample_uniform

SNAPSHOT_VERSION = 1


class SnapshotError(RuntimeError):
    pass


def _trace_for(config: RunConfig, mode: str, path) -> Trace:
    return Trace({"config": config.to_dict(), "mode": mode, "version": __version__}, path)


def _attach(state: opt.RunState, trace: Trace) -> None:
    state.sink = trace.sink
    trace.bind(lambda: (state.step, state.budget_used))


def next_batch_size(state: opt.RunState) -> int:
    """Configured batch size, shrunk (to an even number) near the end of the budget."""
    remaining = state.config.budget_total - state.budget_used
    return min(state.config.batch_size, remaining - remaining % 2)


def _loop(
    state: opt.RunState,
    backend: Backend,
    trace: Trace,
    snapshot: tuple[int, str | Path] | None = None,
    stop_at: int | None = None,
    on_batch: Callable[[opt.RunState], None] | None = None,
) -> None:
    spec = state.config.utility
    while True:
        n = next_batch_size(state)
        if n < 2 or (stop_at is not None and state.step >= stop_at):
            break
        try:
            bt.batch_step(state, backend, spec, n)
        except opt.SelectionError as exc:
            state.emit("stopped", reason=str(exc))
            break
        if on_batch is not None:
            on_batch(state)
        if snapshot is not None and state.step == snapshot[0]:
            trace.flush()
            save_snapshot(snapshot[1], state, backend, trace)
    trace.flush()


def run(
    config: RunConfig,
    trace_path: str | Path | None = None,
    backend: Backend | None = None,
    space: SpaceSpec | None = None,
    snapshot: tuple[int, str | Path] | None = None,
    stop_at: int | None = None,
    on_batch: Callable[[opt.RunState], None] | None = None,
) -> tuple[opt.RunState, Trace]:
    """Adaptive run until the budget is spent (or ``stop_at`` batches).

    ``snapshot=(k, path)`` writes a resumable snapshot after batch ``k``.
    """
    space = space if space is not None else build_space(config)
    backend = backend if backend is not None else build_backend(config, space)
    trace = _trace_for(config, "coup", trace_path)
    state = opt.init(space, config, sink=trace.sink)
    _attach(state, trace)
    state.emit("init", pool_size=state.pool.n, seed=config.seed)
    try:
        _loop(state, backend, trace, snapshot, stop_at, on_batch)
        if next_batch_size(state) < 2:
            _finish(state)
    finally:
        trace.close()
    return state, trace


def _finish(state: opt.RunState) -> None:
    state.emit(
        "finished",
        budget_used=state.budget_used,
        pool_size=state.pool.n,
        certified=[list(state.pool.ids[i]) for i in state.certified_order],
        epsilon=state.epsilon,
        gamma=state.gamma,
    )


# --------------------------------------------------------------------------
# uniform baseline
# --------------------------------------------------------------------------


def run_uniform(
    config: RunConfig,
    trace_path: str | Path | None = None,
    backend: Backend | None = None,
    space: SpaceSpec | None = None,
) -> tuple[opt.RunState, Trace]:
    """Spend the budget on i.i.d. uniform draws (with replacement); no adaptivity, no certification."""
    space = space if space is not None else build_space(config)
    backend = backend if backend is not None else build_backend(config, space)
    trace = _trace_for(config, "uniform", trace_path)
    rng_select, rng_propose = opt.make_rngs(config.seed)
    state = opt.RunState(config, space, opt.ArmPool(), rng_select, rng_propose, sink=trace.sink)
    _attach(state, trace)
    spec = config.utility
    try:
        while state.budget_used < config.budget_total:
            n = min(config.batch_size, config.budget_total - state.budget_used)
            ids = [sample_uniform(space, rng_propose) for _ in range(n)]
            for tid in ids:
                if tid not in state.pool:
                    opt._add_arm(state, tid, uniform=True)
            utils, outcomes = bt.batch_utilities(backend, spec, state, ids)
            opt.apply_observations(state, [state.pool.index[t] for t in ids], utils)
            state.emit("batch", step=state.step, plan=[list(t) for t in ids], utilities=utils, outcomes=outcomes)
            opt.refresh(state)
            state.step += 1
        _finish(state)
    finally:
        trace.close()
    return state, trace


# --------------------------------------------------------------------------
# re-evaluation
# --------------------------------------------------------------------------


@dataclass
class ReevalRow:
    rank: int
    id: tuple
    score: float
    m: int
    lcb: float
    ucb: float
    total: float
    fresh_m: int
    fresh_total: float

    @property
    def reeval_m(self) -> int:
        return self.m + self.fresh_m

    @property
    def reeval_mean(self) -> float:
        return (self.total + self.fresh_total) / self.reeval_m if self.reeval_m else float("nan")

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "id": list(self.id),
            "score": self.score,
            "m": self.m,
            "lcb": self.lcb,
            "ucb": self.ucb,
            "reeval_mean": self.reeval_mean,
            "reeval_m": self.reeval_m,
        }


def reevaluate(
    state: opt.RunState,
    backend: Backend,
    top_k: int | None = None,
    min_samples: int | None = None,
    by: str = "lcb",
    complete_ties: bool | None = None,
) -> list[ReevalRow]:
    """Top up each of the ``top_k`` ranked arms to ``min_samples`` total samples.

    Fresh draws never touch the optimizer's statistics; they are logged to the
    trace as ``reevaluation`` events and reported alongside the original bounds.

    Args:
        complete_ties: Extend the cut past ``top_k`` until the tie group at the
            boundary is whole, so the report's tie-averaged curve is exact at
            every cutoff up to ``top_k``. Defaults to on for mean rankings
            (uniform runs), off for lcb rankings, where long runs of arms
            clipped at lcb 0 would multiply the re-evaluation cost.
    """
    cfg = state.config
    top_k = cfg.reevaluation_top_k if top_k is None else top_k
    min_samples = cfg.reevaluation_min_samples if min_samples is None else min_samples
    pool = state.pool
    score = pool.lcb if by == "lcb" else pool.means()
    if complete_ties is None:
        complete_ties = by == "mean"
    order = opt.rank_indices(state, by)
    cut = min(top_k, len(order))
    if complete_ties:
        while 0 < cut < len(order) and score[order[cut]] == score[order[cut - 1]]:
            cut += 1
    rows = []
    requests = []
    for rank, i in enumerate(order[:cut], start=1):
        m = int(pool.m[i])
        need = max(0, min_samples - m)
        rows.append(
            ReevalRow(rank, pool.ids[i], float(score[i]), m, float(pool.lcb[i]), float(pool.ucb[i]),
                      float(pool.total[i]), need, 0.0)
        )
        requests.extend([len(rows) - 1] * need)
    state.emit(
        "reevaluation_plan",
        by=by,
        min_samples=min_samples,
        rows=[{"rank": r.rank, "id": list(r.id), "score": r.score, "m": r.m, "lcb": r.lcb, "ucb": r.ucb,
               "total": r.total, "fresh_m": r.fresh_m} for r in rows],
    )
    width = max(1, cfg.parallelism)
    for start in range(0, len(requests), width):
        chunk = requests[start : start + width]
        ids = [rows[r].id for r in chunk]
        utils, outcomes = bt.batch_utilities(backend, cfg.utility, state, ids)
        for r, u in zip(chunk, utils):
            rows[r].fresh_total += u
        state.emit(
            "reevaluation", plan=[list(t) for t in ids], utilities=utils, outcomes=outcomes
        )
    return rows


def rows_from_trace(trace: Trace) -> list[ReevalRow]:
    """Rebuild re-evaluation rows from the last ``reevaluation_plan`` and the draws after it."""
    plans = [j for j, e in enumerate(trace.events) if e["kind"] == "reevaluation_plan"]
    if not plans:
        raise TraceError("trace holds no re-evaluation")
    start = plans[-1]
    rows = [
        ReevalRow(r["rank"], tuple(r["id"]), r["score"], r["m"], r["lcb"], r["ucb"], r["total"], r["fresh_m"], 0.0)
        for r in trace.events[start]["rows"]
    ]
    queue = [j for j, r in enumerate(rows) for _ in range(r.fresh_m)]
    cursor = 0
    for event in trace.events[start + 1 :]:
        if event["kind"] != "reevaluation":
            continue
        for u in event["utilities"]:
            rows[queue[cursor]].fresh_total += u
            cursor += 1
    if cursor != len(queue):
        raise TraceError(f"re-evaluation incomplete: {cursor} of {len(queue)} draws recorded")
    return rows


def reevaluation_backend(config: RunConfig, space: SpaceSpec) -> Backend:
    """The run's backend kind on a seed stream disjoint from the run's own."""
    return build_backend(config, space, stream=REEVAL_STREAM)


# --------------------------------------------------------------------------
# snapshots, resume, replay
# --------------------------------------------------------------------------


def save_snapshot(path: str | Path, state: opt.RunState, backend: Backend, trace: Trace) -> None:
    if trace.path is None:
        raise SnapshotError("snapshots need a trace file to anchor to")
    length = trace.path.stat().st_size
    sink, state.sink = state.sink, None
    try:
        payload = {
            "version": SNAPSHOT_VERSION,
            "package_version": __version__,
            "config_digest": state.config.digest(),
            "trace_length": length,
            "trace_digest": file_digest(trace.path, length),
            "state": state,
            "backend_state": backend.get_state(),
        }
        Path(path).write_bytes(pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL))
    finally:
        state.sink = sink


def load_snapshot(path: str | Path) -> dict:
    try:
        payload = pickle.loads(Path(path).read_bytes())
    except FileNotFoundError:
        raise SnapshotError(f"snapshot {path} not found") from None
    except (pickle.UnpicklingError, EOFError, AttributeError) as exc:
        raise SnapshotError(f"snapshot {path} is unreadable: {exc}") from None
    if not isinstance(payload, dict) or payload.get("version") != SNAPSHOT_VERSION:
        raise SnapshotError(f"snapshot format {payload.get('version') if isinstance(payload, dict) else '?'} "
                            f"is not supported (expected {SNAPSHOT_VERSION})")
    return payload


def resume(
    snapshot_path: str | Path,
    trace_path: str | Path,
    config: RunConfig | None = None,
    backend: Backend | None = None,
    stop_at: int | None = None,
) -> tuple[opt.RunState, Trace]:
    """Continue a snapshotted run; the trace is cut back to the snapshot point and extended."""
    payload = load_snapshot(snapshot_path)
    state: opt.RunState = payload["state"]
    if config is not None and config.digest() != payload["config_digest"]:
        raise SnapshotError("config differs from the one the snapshot was taken with")
    trace_path = Path(trace_path)
    if not trace_path.exists():
        raise SnapshotError(f"trace file {trace_path} not found")
    length = payload["trace_length"]
    if trace_path.stat().st_size < length or file_digest(trace_path, length) != payload["trace_digest"]:
        raise SnapshotError("trace does not match the snapshot (digest mismatch)")
    with trace_path.open("r+b") as fh:
        fh.truncate(length)
    try:
        prior = read_trace(trace_path)
    except TraceError as exc:
        raise SnapshotError(str(exc)) from None
    trace = Trace({k: v for k, v in prior.header.items() if k != "format_version"}, trace_path, append=True)
    trace.events = prior.events
    if backend is None:
        backend = build_backend(state.config, state.space)
    backend.set_state(payload["backend_state"])
    _attach(state, trace)
    try:
        _loop(state, backend, trace, None, stop_at)
        if next_batch_size(state) < 2:
            _finish(state)
    finally:
        trace.close()
    return state, trace


def scripted_from_trace(trace: Trace) -> ScriptedBackend:
    """A backend that replays every recorded outcome, per identifier, in order."""
    table: dict = {}
    for event in trace.events:
        if event["kind"] in ("batch", "reevaluation"):
            for tid, outcome in zip(event["plan"], event["outcomes"]):
                table.setdefault(tuple(tid), []).append(Outcome.from_dict(outcome))
    return ScriptedBackend(table)


def replay(trace_path: str | Path) -> tuple[opt.RunState, Trace]:
    """Re-run a recorded adaptive run against its own recorded outcomes."""
    recorded = read_trace(trace_path)
    if recorded.header.get("mode") != "coup":
        raise TraceError("only adaptive-run traces can be replayed")
    try:
        config = RunConfig.from_dict(recorded.header["config"])
    except KeyError:
        raise TraceError("trace header has no config") from None
    state, trace = run(config, backend=scripted_from_trace(recorded))
    return state, trace


def states_equal(a: opt.RunState, b: opt.RunState) -> bool:
    """Bitwise equality of the statistics and control state of two runs."""
    pa, pb = a.pool.state_dict(), b.pool.state_dict()
    if pa["ids"] != pb["ids"]:
        return False
    for name in pa["columns"]:
        if not np.array_equal(pa["columns"][name], pb["columns"][name]):
            return False
    fields = ("budget_used", "step", "uniform_proposals", "threshold", "certified_order", "incumbent",
              "epsilon", "gamma", "last_refresh_pool_size")
    if any(getattr(a, f) != getattr(b, f) for f in fields):
        return False
    return a.rng_select.bit_generator.state == b.rng_select.bit_generator.state and \
        a.rng_propose.bit_generator.state == b.rng_propose.bit_generator.state


__all__ = [
    "ConfigError",
    "ReevalRow",
    "SnapshotError",
    "load_snapshot",
    "reevaluate",
    "reevaluation_backend",
    "rows_from_trace",
    "replay",
    "resume",
    "run",
    "run_uniform",
    "save_snapshot",
    "scripted_from_trace",
    "states_equal",
]
