"""Confidence-bounded pool search: LUCB selection, pool expansion, certification.

State lives in an :class:`ArmPool` of parallel numpy arrays (one slot per
configuration, in activation order) plus a :class:`RunState` holding the
control quantities, random streams and certification bookkeeping.  The
selection helpers take arrays rather than a state so the batching code can run
them on shadow copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from weakspot import bounds as B
from weakspot import kernels
from weakspot.config import RunConfig
from weakspot.oracle import Backend, UtilitySpec, template_key, utility
from weakspot.space import SpaceSpec, TemplateId, encode_many, ensure_valid, sample_uniform
from weakspot.surrogate import ForestModel, ForestParams, max_proximity, propose, retrain_due, train

ACTIVE = "active"
CERTIFIED = "certified"
RETIRED = "retired"


class SelectionError(RuntimeError):
    """Not enough available arms to form a leader/challenger pair."""


class SpaceSaturated(RuntimeError):
    """Every draw landed on an identifier already in the pool."""


class ArmPool:
    """Per-arm statistics stored column-wise; index ``i`` is the i-th activated arm."""

    _COLUMNS = {
        "m": (np.int64, 0),
        "total": (np.float64, 0.0),
        "lcb": (np.float64, 0.0),
        "ucb": (np.float64, 1.0),
        "computed_at": (np.int64, 0),
        "certified": (np.bool_, False),
        "retired": (np.bool_, False),
        "activation_step": (np.int64, 0),
        "ring": (np.float64, 0.0),
    }

    def __init__(self, capacity: int = 128):
        self.ids: list[TemplateId] = []
        self.index: dict[TemplateId, int] = {}
        self.n = 0
        self._buf = {name: np.full(capacity, fill, dtype=dtype) for name, (dtype, fill) in self._COLUMNS.items()}

    def __len__(self) -> int:
        return self.n

    def __contains__(self, tid) -> bool:
        return tid in self.index

    def __getattr__(self, name):
        buf = self.__dict__.get("_buf")
        if buf is not None and name in buf:
            return buf[name][: self.n]
        raise AttributeError(name)

    def add(self, tid: TemplateId, step: int = 0) -> int:
        if tid in self.index:
            raise ValueError(f"{tid!r} is already in the pool")
        cap = len(self._buf["m"])
        if self.n == cap:
            for name, (dtype, fill) in self._COLUMNS.items():
                grown = np.full(2 * cap, fill, dtype=dtype)
                grown[:cap] = self._buf[name]
                self._buf[name] = grown
        i = self.n
        self.ids.append(tid)
        self.index[tid] = i
        self._buf["activation_step"][i] = step
        self._buf["ring"][i] = template_key(tid) / 2.0**64
        self.n += 1
        return i

    def copy(self) -> ArmPool:
        other = ArmPool.__new__(ArmPool)
        other.ids = list(self.ids)
        other.index = dict(self.index)
        other.n = self.n
        other._buf = {name: arr.copy() for name, arr in self._buf.items()}
        return other

    def means(self) -> np.ndarray:
        m = self.m
        return np.where(m > 0, self.total / np.maximum(m, 1), 0.0)

    def status(self, i: int) -> str:
        if self.certified[i]:
            return CERTIFIED
        return RETIRED if self.retired[i] else ACTIVE

    def record(self, i: int) -> dict:
        m = int(self.m[i])
        return {
            "id": self.ids[i],
            "m": m,
            "total": float(self.total[i]),
            "mean": float(self.total[i]) / m if m else None,
            "lcb": float(self.lcb[i]),
            "ucb": float(self.ucb[i]),
            "pool_size_at_compute": int(self.computed_at[i]),
            "status": self.status(i),
            "activation_step": int(self.activation_step[i]),
        }

    def stats(self, i: int) -> B.ArmStats:
        return B.ArmStats(int(self.m[i]), float(self.total[i]))

    def state_dict(self) -> dict:
        return {"ids": list(self.ids), "columns": {k: self.__getattr__(k).copy() for k in self._COLUMNS}}

    @classmethod
    def from_state_dict(cls, data: dict) -> ArmPool:
        pool = cls(max(128, len(data["ids"])))
        for tid in data["ids"]:
            pool.add(tuple(tid))
        for name, values in data["columns"].items():
            pool._buf[name][: pool.n] = values
        return pool


@dataclass
class RunState:
    config: RunConfig
    space: SpaceSpec
    pool: ArmPool
    rng_select: np.random.Generator
    rng_propose: np.random.Generator
    incumbent: int = -1
    epsilon: float = 1.0
    gamma: float = 1.0
    uniform_proposals: int = 0
    budget_used: int = 0
    step: int = 0
    threshold: float | None = None
    certified_order: list = field(default_factory=list)
    last_refresh_pool_size: int = 0
    model: ForestModel | None = None
    trains: int = 0
    saturated: bool = False
    sink: Callable | None = field(default=None, repr=False, compare=False)

    @property
    def budget_total(self) -> int:
        return self.config.budget_total

    @property
    def available(self) -> np.ndarray:
        return ~self.pool.retired

    @property
    def n_certified(self) -> int:
        return len(self.certified_order)

    def emit(self, kind: str, **fields) -> None:
        if self.sink is not None:
            self.sink(kind, fields)


# --------------------------------------------------------------------------
# initialization and expansion
# --------------------------------------------------------------------------


def make_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    select_seq, propose_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(select_seq), np.random.default_rng(propose_seq)


def init(space: SpaceSpec, config: RunConfig, sink: Callable | None = None) -> RunState:
    """Seed the pool with ``n0`` distinct uniform draws; all bounds vacuous."""
    ensure_valid(space)
    rng_select, rng_propose = make_rngs(config.seed)
    state = RunState(config, space, ArmPool(), rng_select, rng_propose, sink=sink)
    misses = 0
    while state.pool.n < config.n0:
        tid = sample_uniform(space, rng_propose)
        if tid in state.pool:
            misses += 1
            if misses >= config.max_redraws:
                state.saturated = True
                break
            continue
        misses = 0
        _add_arm(state, tid, uniform=True)
    state.last_refresh_pool_size = state.pool.n
    state.epsilon = 1.0
    state.gamma = 1.0
    if state.pool.n:
        state.incumbent = 0
    return state


def _add_arm(state: RunState, tid: TemplateId, uniform: bool, source: str = "uniform") -> int:
    i = state.pool.add(tid, state.step)
    state.pool._buf["computed_at"][i] = state.pool.n
    if uniform:
        state.uniform_proposals += 1
    state.emit("arm_added", id=list(tid), index=i, step=state.step, source=source)
    return i


def draw_expansion(state: RunState, exclude) -> tuple[TemplateId, bool]:
    """Draw a configuration not in ``exclude``.  Returns ``(id, was_uniform)``.

    With a trained surrogate, a coin with probability ``random_exploration``
    decides between a uniform draw and a model proposal; without one every
    draw is uniform.
    """
    cfg = state.config
    rng = state.rng_propose
    uniform = state.model is None or rng.random() < cfg.random_exploration
    for _ in range(cfg.max_redraws):
        if uniform:
            tid = sample_uniform(state.space, rng)
        else:
            tid = propose(state.model, state.space, rng, cfg.candidate_pool, exclude)
        if tid not in exclude:
            return tid, uniform
    raise SpaceSaturated(f"{cfg.max_redraws} consecutive draws were already in the pool")


def propose_expansion(state: RunState) -> TemplateId:
    tid, uniform = draw_expansion(state, state.pool.index)
    _add_arm(state, tid, uniform, "uniform" if uniform else "surrogate")
    state.emit("expansion", id=list(tid), uniform=uniform, epsilon=state.epsilon, gamma=state.gamma)
    return tid


# --------------------------------------------------------------------------
# control quantities
# --------------------------------------------------------------------------


def gamma_estimate(uniform_proposals: int, gamma_delta: float) -> float:
    return min(1.0, math.log(1.0 / gamma_delta) / max(1, uniform_proposals))


def update_control_quantities(state: RunState) -> RunState:
    pool = state.pool
    inc, eps = kernels.control(pool.lcb, pool.ucb, ~pool.retired)
    state.incumbent, state.epsilon = int(inc), float(eps)
    state.gamma = gamma_estimate(state.uniform_proposals, state.config.gamma_delta)
    return state


def expansion_condition(epsilon: float, gamma: float, c: float) -> bool:
    return c > 0 and epsilon * epsilon <= c * gamma


def expansion_due(state: RunState, c: float | None = None) -> bool:
    return expansion_condition(state.epsilon, state.gamma, state.config.c if c is None else c)


# --------------------------------------------------------------------------
# selection
# --------------------------------------------------------------------------


def lucb_k(state: RunState) -> int:
    """Size of the top group: the certified count in adaptive mode, else 0."""
    return state.n_certified if state.config.cert.kind == "adaptive" else 0


NO_KEYS = np.zeros(0)


def select_indices(state: RunState, penalty: np.ndarray | None = None, rng=None, tiekeys=None) -> tuple[int, int]:
    """Leader and challenger pool indices.  Draws one uniform per pick from ``rng``."""
    pool = state.pool
    rng = state.rng_select if rng is None else rng
    available = ~pool.retired
    use_keys = tiekeys is not None
    keys = tiekeys if use_keys else NO_KEYS
    leader, excluded = kernels.leader_group(
        pool.m, pool.total, pool.lcb, available, lucb_k(state), rng.random(), keys, use_keys, pool.ring
    )
    if leader < 0:
        raise SelectionError("no available arms")
    use_penalty = penalty is not None
    challenger = kernels.challenger(
        pool.ucb, penalty if use_penalty else NO_KEYS, use_penalty, available, excluded, rng.random(), keys, use_keys
    )
    if challenger < 0:
        raise SelectionError("fewer than two available arms")
    return int(leader), int(challenger)


def select_pair(state: RunState, repulsion=None, rng=None, tiekeys=None) -> tuple[TemplateId, TemplateId]:
    """Leader (empirical-mean best) and challenger (largest, possibly penalized, ucb)."""
    policy = state.config.repulsion if repulsion is None else repulsion
    penalty = repulsion_penalty(state, policy)
    leader, challenger = select_indices(state, penalty, rng, tiekeys)
    return state.pool.ids[leader], state.pool.ids[challenger]


def needs_forced_expansion(state: RunState) -> bool:
    return int((~state.pool.retired).sum()) < lucb_k(state) + 2


# --------------------------------------------------------------------------
# surrogate and repulsion
# --------------------------------------------------------------------------


def configs_with_two_samples(state: RunState) -> int:
    return int((state.pool.m >= 2).sum())


def maybe_retrain(state: RunState) -> bool:
    """Retrain when more configurations have >= 2 samples than at the last training."""
    if not state.config.surrogate:
        return False
    count = configs_with_two_samples(state)
    if not retrain_due(state.model, count):
        return False
    pool = state.pool
    rows = np.flatnonzero(pool.m >= 1)
    X = encode_many(state.space, [pool.ids[i] for i in rows])
    y = pool.total[rows] / pool.m[rows]
    params = state.config.forest
    seed = int(np.random.SeedSequence([state.config.seed, state.trains, 0x7EE5]).generate_state(1)[0])
    forest = ForestParams(params.n_trees, params.min_leaf, params.max_features, params.bootstrap, seed)
    state.model = train(X, y, forest, marker=count)
    state.trains += 1
    state.emit("surrogate_trained", rows=int(rows.size), marker=count)
    return True


def reference_set(state: RunState, policy) -> np.ndarray:
    pool = state.pool
    ref = pool.certified.copy()
    if policy.epsilon_ref > 0 and pool.n:
        best = float(pool.means().max())
        ref |= pool.lcb >= best - policy.epsilon_ref
    return np.flatnonzero(ref)


def repulsion_penalty(state: RunState, policy=None, extra_ids: Sequence[TemplateId] = ()) -> np.ndarray | None:
    """``lam * max proximity to the reference set`` for every pool arm (then ``extra_ids``)."""
    policy = state.config.repulsion if policy is None else policy
    if not policy.enabled or state.model is None or policy.lam == 0:
        return None
    ref = reference_set(state, policy)
    if ref.size == 0:
        return None
    ids = list(state.pool.ids) + list(extra_ids)
    leaves = state.model.leaves_for(state.space, ids)
    return policy.lam * max_proximity(leaves, leaves[ref])


# --------------------------------------------------------------------------
# observations, refresh, certification
# --------------------------------------------------------------------------


def apply_observations(state: RunState, indices: Sequence[int], utilities: Sequence[float]) -> None:
    """Add realized utilities in order, then recompute touched arms at the current pool size."""
    pool = state.pool
    m = pool._buf["m"]
    total = pool._buf["total"]
    for i, y in zip(indices, utilities):
        if not 0.0 <= y <= 1.0:
            raise ValueError(f"utility {y} outside [0, 1]")
        m[i] += 1
        total[i] += y
    n = pool.n
    delta = state.config.bounds_delta
    lcb = pool._buf["lcb"]
    ucb = pool._buf["ucb"]
    at = pool._buf["computed_at"]
    for i in sorted(set(indices)):
        lcb[i], ucb[i] = B.bounds_scalar(int(m[i]), float(total[i]), delta, n)
        at[i] = n
    state.budget_used += len(indices)


def refresh(state: RunState) -> bool:
    pool = state.pool
    done, marker = B.deferred_refresh(
        pool.m,
        pool.total,
        pool.lcb,
        pool.ucb,
        pool.computed_at,
        state.config.bounds_delta,
        pool.n,
        state.last_refresh_pool_size,
    )
    if done:
        state.emit("bounds_refreshed", pool_size=pool.n, previous=state.last_refresh_pool_size)
        state.last_refresh_pool_size = marker
    return done


def samples_to_reach(t, mean, m, delta: float, n: int, floor: float):
    """Hoeffding sample count at which an arm with this mean would have lcb ``t``."""
    d_i = delta / (B.ALLOCATION_CONSTANT * n * n * np.maximum(m, 1.0) ** 2)
    gap = np.maximum(mean - t, floor)
    return np.log(2.0 / d_i) / (2.0 * gap * gap)


def raised_threshold(state: RunState) -> float:
    """Balance the samples needed to lift every certified arm to ``t`` against
    the samples the best uncertified arm needs to reach ``t``; return the
    largest ``t`` where lifting the certified set is no more expensive."""
    pool = state.pool
    policy = state.config.cert
    current = state.threshold
    live = ~pool.retired
    cert = np.flatnonzero(pool.certified & live)
    mean = pool.means()
    top = float(mean[cert].min())
    if top <= current:
        return current
    grid = np.linspace(current, top, policy.grid)
    delta = state.config.bounds_delta
    n = pool.n
    m_c = pool.m[cert].astype(np.float64)
    need_c = samples_to_reach(grid[:, None], mean[cert][None, :], m_c[None, :], delta, n, policy.floor)
    lift = np.maximum(0.0, need_c - m_c[None, :]).sum(axis=1)
    rest = live & ~pool.certified & (pool.m > 0)
    if rest.any():
        best = int(np.argmax(np.where(rest, mean, -np.inf)))
        m_b = float(pool.m[best])
        admit = np.maximum(0.0, samples_to_reach(grid, mean[best], m_b, delta, n, policy.floor) - m_b)
    else:
        admit = np.full(grid.shape, np.inf)
    ok = lift <= admit
    return max(current, float(grid[ok].max())) if ok.any() else current


def certify_step(state: RunState) -> list[int]:
    """Apply the certification policy; returns indices certified this call."""
    policy = state.config.cert
    if policy.kind == "none":
        return []
    pool = state.pool
    if state.threshold is None:
        state.threshold = policy.tau
    newly = []
    if policy.kind == "fixed":
        hits = np.flatnonzero(~pool.retired & ~pool.certified & (pool.lcb >= state.threshold))
        hits = hits[np.argsort(-pool.lcb[hits], kind="stable")]
        for i in hits:
            pool._buf["certified"][i] = True
            pool._buf["retired"][i] = True
            state.certified_order.append(int(i))
            newly.append(int(i))
            state.emit("certified", id=list(pool.ids[i]), index=int(i), lcb=float(pool.lcb[i]), threshold=state.threshold)
        return newly
    while True:
        cand = ~pool.retired & ~pool.certified & (pool.lcb >= state.threshold)
        if not cand.any():
            return newly
        i = int(np.argmax(np.where(cand, pool.lcb, -np.inf)))
        pool._buf["certified"][i] = True
        state.certified_order.append(i)
        newly.append(i)
        state.emit("certified", id=list(pool.ids[i]), index=i, lcb=float(pool.lcb[i]), threshold=state.threshold)
        raised = raised_threshold(state)
        if raised > state.threshold:
            state.emit("threshold_raised", old=state.threshold, new=raised, certified=state.n_certified)
            state.threshold = raised


# --------------------------------------------------------------------------
# ranking
# --------------------------------------------------------------------------


def rank_indices(state: RunState, by: str = "lcb") -> list[int]:
    """Certified and active arms, best first; ties by activation step, then id."""
    pool = state.pool
    if by == "lcb":
        score = pool.lcb
    elif by == "mean":
        score = pool.means()
    else:
        raise ValueError(f"unknown ranking criterion {by!r}")
    keep = np.flatnonzero(pool.certified | ~pool.retired)
    act = pool.activation_step
    return sorted(keep.tolist(), key=lambda i: (-score[i], act[i], pool.ids[i]))


def rank(state: RunState, by: str = "lcb") -> list[tuple[TemplateId, float]]:
    pool = state.pool
    score = pool.lcb if by == "lcb" else pool.means()
    return [(pool.ids[i], float(score[i])) for i in rank_indices(state, by)]


def tie_groups(scores: Sequence[float]) -> list[tuple[int, int]]:
    """Half-open ``(start, stop)`` runs of exactly equal consecutive scores."""
    groups = []
    start = 0
    for k in range(1, len(scores) + 1):
        if k == len(scores) or scores[k] != scores[start]:
            groups.append((start, k))
            start = k
    return groups


# --------------------------------------------------------------------------
# sequential reference step
# --------------------------------------------------------------------------


def sequential_round(state: RunState, backend: Backend, spec: UtilitySpec) -> tuple[int, int]:
    """One unbatched round: maybe expand, sample leader and challenger, certify."""
    maybe_retrain(state)
    update_control_quantities(state)
    if (expansion_due(state) or needs_forced_expansion(state)) and not state.saturated:
        try:
            propose_expansion(state)
        except SpaceSaturated:
            state.saturated = True
    leader, challenger = select_indices(state, repulsion_penalty(state))
    state.emit("pair_selected", leader=list(state.pool.ids[leader]), challenger=list(state.pool.ids[challenger]))
    ids = [state.pool.ids[leader], state.pool.ids[challenger]]
    outcomes = backend.evaluate_many(ids)
    utils = [utility(spec, o, t, state.space) for o, t in zip(outcomes, ids)]
    apply_observations(state, [leader, challenger], utils)
    for tid, o, u in zip(ids, outcomes, utils):
        state.emit("observation", id=list(tid), utility=u, outcome=o.to_dict())
    refresh(state)
    state.step += 1
    certify_step(state)
    return leader, challenger
