"""Parallel batch construction by frozen-lower-bound simulation.

A batch of ``N`` evaluations is planned from the pre-batch state alone:

1. :func:`simulate_activation_schedule` runs ``N / 2`` counterfactual
   leader/challenger rounds on a shadow copy, feeding every sampled arm its
   current empirical mean, and records the round at which the expansion
   condition fires.  New identifiers are drawn for real here (from the
   proposal stream), so the schedule fixes exactly which arms join mid-batch.
2. :func:`build_batch` gives ``N / 2`` slots to the empirical-mean leader and
   fills the other half one challenger at a time.  Each chosen challenger is
   temporarily updated as if it had returned its *pre-batch* lcb, which only
   lowers its ucb and pushes later slots towards other arms.
3. :func:`execute_batch` evaluates the plan and applies the realized
   utilities.  Nothing from steps 1-2 touches the real statistics.

:func:`verify_g1` and :func:`verify_g2` replay the challenger loop in two
worlds (frozen lcb outcomes vs. true-mean outcomes) to check the
conservativeness and coverage guarantees empirically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from weakspot import kernels
from weakspot import optimizer as opt
from weakspot.oracle import Backend, SyntheticBackend, UtilitySpec, keyed_uniforms, utility
from weakspot.space import TemplateId
from weakspot.surrogate import max_proximity

NO_KEYS = opt.NO_KEYS


@dataclass(frozen=True)
class ActivationSchedule:
    """``entries`` are ``(round, id, drawn_uniformly)``; rounds count from 1."""

    entries: tuple = ()

    def __post_init__(self):
        rounds = [t for t, _, _ in self.entries]
        if any(b <= a for a, b in zip(rounds, rounds[1:])):
            raise ValueError("activation rounds must be strictly increasing")

    def __len__(self) -> int:
        return len(self.entries)

    def at(self, t: int) -> list[tuple[TemplateId, bool]]:
        return [(tid, uni) for r, tid, uni in self.entries if r == t]

    def to_list(self) -> list:
        return [[t, list(tid), uni] for t, tid, uni in self.entries]


@dataclass
class FrozenState:
    """Shadow statistics for one batch plus the frozen simulated outcomes.

    ``frozen[i]`` is arm ``i``'s pre-batch lcb (0 for arms activated during
    the batch) and never changes.  Shadow bounds are computed at the
    pre-batch pool size ``n_bound``.
    """

    m: np.ndarray
    total: np.ndarray
    lcb: np.ndarray
    ucb: np.ndarray
    available: np.ndarray
    frozen: np.ndarray
    ring: np.ndarray
    penalty: np.ndarray | None
    index: dict
    ids: list
    n_bound: int
    delta: float
    ref_leaves: np.ndarray | None = None

    @classmethod
    def from_state(cls, state: opt.RunState) -> FrozenState:
        pool = state.pool
        penalty = opt.repulsion_penalty(state)
        ref_leaves = None
        if penalty is not None:
            ref = opt.reference_set(state, state.config.repulsion)
            ref_leaves = state.model.leaves_for(state.space, [pool.ids[i] for i in ref])
        return cls(
            m=pool.m.copy(),
            total=pool.total.copy(),
            lcb=pool.lcb.copy(),
            ucb=pool.ucb.copy(),
            available=~pool.retired,
            frozen=pool.lcb.copy(),
            ring=pool.ring.copy(),
            penalty=penalty,
            index=dict(pool.index),
            ids=list(pool.ids),
            n_bound=pool.n,
            delta=state.config.bounds_delta,
            ref_leaves=ref_leaves,
        )

    @property
    def n(self) -> int:
        return len(self.ids)

    def activate(self, state: opt.RunState, tid: TemplateId) -> int:
        i = self.n
        self.ids.append(tid)
        self.index[tid] = i
        self.m = np.append(self.m, 0)
        self.total = np.append(self.total, 0.0)
        self.lcb = np.append(self.lcb, 0.0)
        self.ucb = np.append(self.ucb, 1.0)
        self.available = np.append(self.available, True)
        self.frozen = np.append(self.frozen, 0.0)
        self.ring = np.append(self.ring, opt.template_key(tid) / 2.0**64)
        if self.penalty is not None:
            leaves = state.model.leaves_for(state.space, [tid])
            extra = state.config.repulsion.lam * max_proximity(leaves, self.ref_leaves)
            self.penalty = np.append(self.penalty, extra)
        return i

    def mean(self, i: int) -> float:
        return self.total[i] / self.m[i] if self.m[i] > 0 else 0.0

    def update(self, i: int, y: float) -> None:
        kernels.shadow_update(self.m, self.total, self.lcb, self.ucb, i, y, self.delta, self.n_bound)

    def select(self, k: int, u_lead: float, u_chal: float, keys=None) -> tuple[int, int, np.ndarray]:
        use_keys = keys is not None
        keys = keys if use_keys else NO_KEYS
        lead, excluded = kernels.leader_group(
            self.m, self.total, self.lcb, self.available, k, u_lead, keys, use_keys, self.ring
        )
        if lead < 0:
            return -1, -1, excluded
        return int(lead), self.challenger(excluded, u_chal, keys if use_keys else None), excluded

    def challenger(self, excluded: np.ndarray, u: float, keys=None) -> int:
        if excluded.shape[0] < self.n:
            excluded = np.concatenate([excluded, np.zeros(self.n - excluded.shape[0], dtype=bool)])
        use_keys = keys is not None
        use_pen = self.penalty is not None
        return int(
            kernels.challenger(
                self.ucb,
                self.penalty if use_pen else NO_KEYS,
                use_pen,
                self.available,
                excluded,
                u,
                keys if use_keys else NO_KEYS,
                use_keys,
            )
        )


@dataclass(frozen=True)
class BatchPlan:
    """``entries[:N/2]`` are the leader; the rest come from the challenger loop.

    ``indices`` are pool positions once the scheduled arms have been added
    (they are appended in schedule order, so positions are known up front).
    """

    entries: tuple
    indices: tuple
    leader: int
    schedule: ActivationSchedule
    simulated: tuple = ()

    @property
    def incumbent_share(self) -> int:
        return len(self.entries) // 2

    def __len__(self) -> int:
        return len(self.entries)


def _scratch_uniforms(state: opt.RunState, count: int) -> np.ndarray:
    """Tie-break numbers for the schedule simulation, addressed by (seed, batch index)."""
    return keyed_uniforms(state.config.seed, [state.step ^ 0x5C4ED] * count, range(count))


def _check_n(n: int) -> int:
    if n < 2 or n % 2:
        raise ValueError(f"batch size must be even and >= 2, got {n}")
    return n // 2


def simulate_activation_schedule(state: opt.RunState, n: int, mode: str | None = None) -> ActivationSchedule:
    """Rounds at which the expansion condition fires in a simulated continuation.

    Each of the ``n / 2`` rounds checks the expansion condition, then samples
    a leader/challenger pair and feeds both their current empirical mean
    (``mode="expected"``) or their frozen pre-batch lcb (``"pessimistic"``).
    Tie-breaks use counter-based numbers so the real selection stream is untouched;
    identifiers are drawn from the real proposal stream.
    """
    half = _check_n(n)
    mode = state.config.schedule if mode is None else mode
    cfg = state.config
    shadow = FrozenState.from_state(state)
    uniforms = _scratch_uniforms(state, 2 * half)
    k = opt.lucb_k(state)
    uniform_count = state.uniform_proposals
    saturated = state.saturated
    entries = []
    t = 1
    while t <= half:
        use_pen = shadow.penalty is not None
        t = kernels.schedule_rounds(
            shadow.m, shadow.total, shadow.lcb, shadow.ucb, shadow.available, shadow.ring,
            shadow.penalty if use_pen else NO_KEYS, use_pen, shadow.frozen, k, uniforms, t, half,
            mode == "expected", shadow.delta, shadow.n_bound, cfg.c,
            opt.gamma_estimate(uniform_count, cfg.gamma_delta), not saturated,
        )
        if t > half:
            break
        try:
            tid, uniform = opt.draw_expansion(state, shadow.index)
        except opt.SpaceSaturated:
            saturated = True
            continue
        shadow.activate(state, tid)
        entries.append((t, tid, uniform))
        uniform_count += int(uniform)
        # this round's pair is still to be sampled, without re-checking expansion
        kernels.schedule_rounds(
            shadow.m, shadow.total, shadow.lcb, shadow.ucb, shadow.available, shadow.ring,
            shadow.penalty if use_pen else NO_KEYS, use_pen, shadow.frozen, k, uniforms, t, t,
            mode == "expected", shadow.delta, shadow.n_bound, cfg.c, 1.0, False,
        )
        t += 1
    return ActivationSchedule(tuple(entries))


def build_batch(state: opt.RunState, schedule: ActivationSchedule, n: int) -> BatchPlan:
    """Leader half plus the frozen-lcb challenger loop; shadow state is discarded."""
    half = _check_n(n)
    shadow = FrozenState.from_state(state)
    uniforms = state.rng_select.random(half + 1)
    for tid, _ in schedule.at(1):
        shadow.activate(state, tid)
    lead, excluded = kernels.leader_group(
        shadow.m, shadow.total, shadow.lcb, shadow.available, opt.lucb_k(state), uniforms[0], NO_KEYS, False,
        shadow.ring,
    )
    if lead < 0:
        raise opt.SelectionError("no available arms")
    picks = np.full(half, -1, dtype=np.int64)
    bounds = sorted({t for t, _, _ in schedule.entries if t > 1}) + [half + 1]
    t = 1
    for nxt in bounds:
        if t > 1:
            for tid, _ in schedule.at(t):
                shadow.activate(state, tid)
        if excluded.shape[0] < shadow.n:
            excluded = np.concatenate([excluded, np.zeros(shadow.n - excluded.shape[0], dtype=bool)])
        use_pen = shadow.penalty is not None
        stop = kernels.challenger_rounds(
            shadow.m, shadow.total, shadow.lcb, shadow.ucb, shadow.available, shadow.penalty if use_pen else NO_KEYS,
            use_pen, excluded, shadow.frozen, uniforms, t, nxt - 1, shadow.delta, shadow.n_bound, picks,
        )
        if stop < nxt:
            raise opt.SelectionError(f"no challenger available at batch step {stop}")
        t = nxt
    chosen = picks.tolist()
    indices = (int(lead),) * half + tuple(chosen)
    return BatchPlan(
        tuple(shadow.ids[i] for i in indices), indices, int(lead), schedule, tuple(float(shadow.frozen[i]) for i in chosen)
    )


def plan_batch(state: opt.RunState, n: int | None = None) -> BatchPlan:
    n = state.config.batch_size if n is None else n
    return build_batch(state, simulate_activation_schedule(state, n), n)


def batch_utilities(backend: Backend, spec: UtilitySpec, state: opt.RunState, ids: Sequence[TemplateId]):
    """Evaluate ``ids``; returns ``(utilities, outcome dicts)``."""
    if type(backend) is SyntheticBackend and spec.kind == "error_rate":
        errors = backend.error_draws(ids)
        return errors.astype(np.float64).tolist(), [{"correct": not bool(e)} for e in errors]
    outcomes = backend.evaluate_many(ids)
    utils = [utility(spec, o, t, state.space) for o, t in zip(outcomes, ids)]
    return utils, [o.to_dict() for o in outcomes]


def execute_batch(plan: BatchPlan, backend: Backend, spec: UtilitySpec, state: opt.RunState) -> list[float]:
    """Activate scheduled arms, evaluate every slot, apply results in plan order, certify."""
    for t, tid, uniform in plan.schedule.entries:
        opt._add_arm(state, tid, uniform, "uniform" if uniform else "surrogate")
        state.emit("expansion", id=list(tid), uniform=uniform, round=t)
    if max(plan.indices) >= state.pool.n:
        raise RuntimeError("plan refers to arms that were never activated")
    utils, outcomes = batch_utilities(backend, spec, state, plan.entries)
    opt.apply_observations(state, plan.indices, utils)
    state.emit(
        "batch",
        step=state.step,
        schedule=plan.schedule.to_list(),
        plan=[list(tid) for tid in plan.entries],
        utilities=utils,
        outcomes=outcomes,
    )
    opt.refresh(state)
    state.step += 1
    opt.certify_step(state)
    return utils


def batch_step(state: opt.RunState, backend: Backend, spec: UtilitySpec, n: int | None = None) -> BatchPlan:
    """One full batch: retrain check, control update, schedule, build, execute."""
    opt.maybe_retrain(state)
    opt.update_control_quantities(state)
    plan = plan_batch(state, n)
    state.emit("pair_selected", leader=list(plan.entries[0]), challengers=[list(t) for t in plan.entries[len(plan) // 2 :]])
    execute_batch(plan, backend, spec, state)
    return plan


# --------------------------------------------------------------------------
# guarantee checks
# --------------------------------------------------------------------------


@dataclass
class WorldTrace:
    """Challenger sequence and counts from one simulated world."""

    picks: list = field(default_factory=list)
    post_ucb: list = field(default_factory=list)

    @property
    def support(self) -> set:
        return set(self.picks)

    def counts(self) -> dict:
        out: dict = {}
        for i in self.picks:
            out[i] = out.get(i, 0) + 1
        return out


def _challenger_world(
    state: opt.RunState,
    schedule: ActivationSchedule,
    steps: int,
    outcome: Callable[[FrozenState, int], float],
    keys_for: Callable[[FrozenState], np.ndarray] | None,
) -> tuple[WorldTrace, FrozenState, int]:
    shadow = FrozenState.from_state(state)
    for tid, _ in schedule.at(1):
        shadow.activate(state, tid)
    keys = keys_for(shadow) if keys_for else None
    lead, excluded = kernels.leader_group(
        shadow.m, shadow.total, shadow.lcb, shadow.available, opt.lucb_k(state), 0.0,
        keys if keys is not None else NO_KEYS, keys is not None, shadow.ring,
    )
    trace = WorldTrace()
    for t in range(1, steps + 1):
        if t > 1:
            for tid, _ in schedule.at(t):
                shadow.activate(state, tid)
        keys = keys_for(shadow) if keys_for else None
        c = shadow.challenger(excluded, 0.0, keys)
        if c < 0:
            break
        shadow.update(c, outcome(shadow, c))
        trace.picks.append(c)
        trace.post_ucb.append(float(shadow.ucb[c]))
    return trace, shadow, int(lead)


def _true_means(shadow: FrozenState, mean_fn) -> np.ndarray:
    return np.array([mean_fn(tid) for tid in shadow.ids])


@dataclass
class G1Result:
    steps: int
    violations: int  # steps where frozen post-update ucb > true-mean post-update ucb
    lcb_valid: bool  # every arm had lcb <= true mean before the batch

    @property
    def violated(self) -> bool:
        return self.violations > 0


def verify_g1(state: opt.RunState, n: int, mean_fn: Callable[[TemplateId], float]) -> G1Result:
    """Step-aligned comparison of post-update ucbs under frozen vs. true-mean outcomes.

    Runs the frozen-lcb challenger loop; at every step compares the chosen
    arm's post-update ucb against the ucb the same shadow state would give
    had the arm returned its true mean.
    """
    half = _check_n(n)
    schedule = simulate_activation_schedule(fork(state), n)
    shadow = FrozenState.from_state(state)
    for tid, _ in schedule.at(1):
        shadow.activate(state, tid)
    _, excluded = kernels.leader_group(
        shadow.m, shadow.total, shadow.lcb, shadow.available, opt.lucb_k(state), 0.0, NO_KEYS, False, shadow.ring
    )
    pool = state.pool
    mu_pool = np.array([mean_fn(t) for t in pool.ids])
    valid = bool(np.all(pool.lcb[~pool.retired] <= mu_pool[~pool.retired]))
    violations = 0
    steps = 0
    for t in range(1, half + 1):
        if t > 1:
            for tid, _ in schedule.at(t):
                shadow.activate(state, tid)
        c = shadow.challenger(excluded, 0.5)
        if c < 0:
            break
        m, total = int(shadow.m[c]), float(shadow.total[c])
        mu = mean_fn(shadow.ids[c])
        _, ucb_expected = kernels.bound_pair(m + 1, total + mu, shadow.delta, shadow.n_bound)
        shadow.update(c, float(shadow.frozen[c]))
        steps += 1
        if shadow.ucb[c] > ucb_expected:
            violations += 1
    return G1Result(steps, violations, valid)


@dataclass
class G2Result:
    real: WorldTrace
    sim: WorldTrace

    @property
    def contained(self) -> bool:
        return self.real.support <= self.sim.support

    @property
    def strict(self) -> bool:
        return self.contained and self.real.support < self.sim.support

    def average_allocation(self, world: WorldTrace) -> float:
        counts = world.counts()
        support = self.real.support
        return sum(counts.get(i, 0) for i in support) / max(1, len(support))

    @property
    def allocation_ok(self) -> bool:
        """Strict containment must come with a lower average allocation over S_real."""
        if not self.strict:
            return True
        return self.average_allocation(self.sim) < self.average_allocation(self.real)


def fork(state: opt.RunState) -> opt.RunState:
    """Copy with independent pool and random streams (the original is not advanced)."""
    clone = opt.RunState(**{f: getattr(state, f) for f in state.__dataclass_fields__})
    clone.pool = state.pool.copy()
    clone.rng_select = _copy_rng(state.rng_select)
    clone.rng_propose = _copy_rng(state.rng_propose)
    clone.certified_order = list(state.certified_order)
    clone.sink = None
    return clone


def _copy_rng(rng: np.random.Generator) -> np.random.Generator:
    other = np.random.Generator(type(rng.bit_generator)())
    other.bit_generator.state = rng.bit_generator.state
    return other


def verify_g2(
    state: opt.RunState,
    k: int,
    mean_fn: Callable[[TemplateId], float],
    tie_seed: int = 0,
    schedule: ActivationSchedule | None = None,
) -> G2Result:
    """Unique challengers over ``k`` steps: expected-outcome world vs. frozen-lcb world.

    Both worlds start from the same state, share the activation schedule and
    break ties with the same per-arm random keys (drawn from ``tie_seed``),
    so they differ only in the simulated outcomes.
    """
    if schedule is None:
        schedule = simulate_activation_schedule(fork(state), 2 * k)
    n_max = state.pool.n + len(schedule)
    keys = np.random.default_rng(tie_seed).random(n_max)

    def keys_for(shadow: FrozenState) -> np.ndarray:
        return keys[: shadow.n]

    def real_outcome(shadow: FrozenState, i: int) -> float:
        return float(mean_fn(shadow.ids[i]))

    def sim_outcome(shadow: FrozenState, i: int) -> float:
        return float(shadow.frozen[i])

    real, _, _ = _challenger_world(state, schedule, k, real_outcome, keys_for)
    sim, _, _ = _challenger_world(state, schedule, k, sim_outcome, keys_for)
    return G2Result(real, sim)


def lcb_valid(state: opt.RunState, mean_fn: Callable[[TemplateId], float]) -> bool:
    pool = state.pool
    mu = np.array([mean_fn(t) for t in pool.ids])
    live = ~pool.retired
    return bool(np.all(pool.lcb[live] <= mu[live] + 0.0))


__all__ = [
    "ActivationSchedule",
    "BatchPlan",
    "FrozenState",
    "G1Result",
    "G2Result",
    "batch_step",
    "build_batch",
    "execute_batch",
    "fork",
    "lcb_valid",
    "plan_batch",
    "simulate_activation_schedule",
    "verify_g1",
    "verify_g2",
]
