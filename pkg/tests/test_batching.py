import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import HAND, HAND_MUS, HAND_REAL, HAND_SIM, brute_worlds, hand_state, set_bounds
from weakspot import batching as bt
from weakspot import optimizer as opt
from weakspot.config import RunConfig
from weakspot.harness.run import run, states_equal
from weakspot.oracle import Outcome, ScriptedBackend, SyntheticBackend, UtilitySpec
from weakspot.presets import environment, needles

SPEC = UtilitySpec()


def warm(seed=0, batches=20, **config):
    env = environment("needles")
    cfg = RunConfig(surrogate=False, seed=seed, **config)
    state, _ = run(cfg, backend=SyntheticBackend(env.mean_fn, seed), space=env.space, stop_at=batches)
    return state, env


def test_far_from_expansion_gives_empty_schedule():
    state = hand_state([(0, 0)] * 10)  # epsilon = 1, gamma ~ ln(200) / 10 < 1
    assert len(bt.simulate_activation_schedule(state, 20)) == 0


def test_expansion_due_at_first_round():
    # tight, converged bounds: epsilon is tiny and gamma large, so round 1 expands
    state = hand_state([(4000, 3800.0), (4000, 3796.0), (4000, 1200.0)])
    opt.update_control_quantities(state)
    assert opt.expansion_due(state)
    schedule = bt.simulate_activation_schedule(state, 20)
    assert schedule.entries[0][0] == 1
    assert schedule.entries[0][1] not in state.pool


def test_schedule_is_deterministic():
    a, _ = warm(seed=3)
    b, _ = warm(seed=3)
    assert bt.simulate_activation_schedule(a, 20) == bt.simulate_activation_schedule(b, 20)


def test_schedule_rounds_must_increase():
    with pytest.raises(ValueError):
        bt.ActivationSchedule(((2, (1,), True), (2, (2,), True)))


@pytest.mark.parametrize("seed", range(8))
def test_plan_structure_and_shadow_isolation(seed):
    state, _ = warm(seed=seed, batches=1 + 7 * seed)
    before = state.pool.state_dict()
    plan = bt.plan_batch(state, 20)
    after = state.pool.state_dict()
    assert len(plan) == 20 and plan.incumbent_share == 10
    assert plan.entries[:10] == (plan.entries[0],) * 10
    assert plan.leader == plan.indices[0]
    assert before["ids"] == after["ids"]
    for name in before["columns"]:
        assert np.array_equal(before["columns"][name], after["columns"][name])


def test_single_challenger_gets_every_slot():
    state = hand_state([(30, 27.0), (10, 5.0)])
    plan = bt.build_batch(state, bt.ActivationSchedule(), 20)
    assert plan.entries == ((0,),) * 10 + ((1,),) * 10
    assert plan.simulated == (state.pool.lcb[1],) * 10


def test_equal_challengers_alternate():
    # leader plus two identical challengers with frozen value 0; sampling one lowers
    # its shadow ucb below the other's, so every pair of slots covers both arms
    # (the second pick of a pair is forced, the first is a seeded tie-break)
    state = hand_state([(100, 90.0), (40, 0.0), (40, 0.0)])
    assert state.pool.ucb[1] < 1.0
    assert state.pool.lcb[1] == state.pool.lcb[2] == 0.0
    plan = bt.build_batch(state, bt.ActivationSchedule(), 20)
    chal = [t[0] for t in plan.entries[10:]]
    assert all({chal[j], chal[j + 1]} == {1, 2} for j in range(0, 10, 2))


def test_frozen_updates_never_raise_shadow_ucb():
    for seed in range(10):
        state, _ = warm(seed=seed, batches=5 + seed)
        shadow = bt.FrozenState.from_state(state)
        _, _, excluded = shadow.select(0, 0.3, 0.3)
        for _ in range(10):
            c = shadow.challenger(excluded, 0.5)
            before = shadow.ucb[c]
            if shadow.m[c] >= 1:
                assert shadow.frozen[c] <= shadow.mean(c)
            shadow.update(c, shadow.frozen[c])
            assert shadow.ucb[c] <= before + 1e-12


def test_execute_spends_exactly_n():
    state, env = warm(seed=1, batches=3)
    used = state.budget_used
    bt.batch_step(state, SyntheticBackend(env.mean_fn, 1), SPEC, 20)
    assert state.budget_used == used + 20


class FlakyBackend(SyntheticBackend):
    """Times out on the first ``k`` slots of each batch."""

    def __init__(self, mean_fn, k):
        super().__init__(mean_fn)
        self.k = k

    def evaluate_many(self, tids):
        outs = super().evaluate_many(tids)
        return [Outcome(failure="timeout") if j < self.k else o for j, o in enumerate(outs)]


def test_timeouts_become_zero_utility_observations():
    state, _ = warm(seed=2, batches=3)
    utils = bt.execute_batch(bt.plan_batch(state, 20), FlakyBackend(lambda t: 1.0, 3), SPEC, state)
    assert utils[:3] == [0.0, 0.0, 0.0] and utils[3:] == [1.0] * 17


def test_result_application_is_order_insensitive():
    state, _ = warm(seed=4, batches=10)
    plan = bt.plan_batch(state, 20)
    a, b = bt.fork(state), bt.fork(state)
    rng = np.random.default_rng(0)
    ys = rng.integers(0, 2, 20).astype(float).tolist()
    opt.apply_observations(a, plan.indices, ys)
    perm = rng.permutation(20)
    opt.apply_observations(b, [plan.indices[j] for j in perm], [ys[j] for j in perm])
    assert np.array_equal(a.pool.lcb, b.pool.lcb) and np.array_equal(a.pool.total, b.pool.total)


def scripted(env, draws=1500, seed=0):
    rng = np.random.default_rng(seed)
    table = {}
    for x in range(env.space.params[0].cardinality):
        tid = (x,)
        table[tid] = [Outcome(correct=bool(u >= env.true_mean(tid))) for u in rng.random(draws)]
    return ScriptedBackend(table)


@pytest.mark.parametrize("surrogate", [False, True])
def test_batch_of_two_equals_sequential(surrogate):
    env = needles(n_templates=200)
    cfg = RunConfig(batch_size=2, budget_total=1500, surrogate=surrogate, seed=5, n0=20)
    batched = opt.init(env.space, cfg)
    sequential = opt.init(env.space, cfg)
    b1, b2 = scripted(env), scripted(env)
    while batched.budget_used < cfg.budget_total:
        plan = bt.batch_step(batched, b1, SPEC, 2)
        leader, challenger = opt.sequential_round(sequential, b2, SPEC)
        assert plan.entries == (sequential.pool.ids[leader], sequential.pool.ids[challenger])
    assert states_equal(batched, sequential)


# --------------------------------------------------------------------------
# guarantee checks on hand-built states
# --------------------------------------------------------------------------


def test_g1_zero_violations_when_all_bounds_valid():
    for seed in range(20):
        state, env = warm(seed=seed, batches=1 + 3 * seed)
        if not bt.lcb_valid(state, env.true_mean):
            continue
        assert not bt.verify_g1(state, 20, env.true_mean).violated


def test_g1_single_arm_sequence():
    # one challenger only: every frozen post-update ucb sits below the true-mean one
    state = hand_state([(40, 36.0), (6, 3.0)])
    res = bt.verify_g1(state, 20, lambda tid: 0.6 if tid == (1,) else 0.9)
    assert res.steps == 10 and res.violations == 0 and res.lcb_valid


def test_g2_worlds_coincide_when_frozen_equals_truth():
    state = hand_state([(50, 45.0), (8, 4.0), (8, 3.0), (3, 1.0)])
    lcb = dict(zip(state.pool.ids, state.pool.lcb))
    res = bt.verify_g2(state, 10, lambda tid: lcb[tid], schedule=bt.ActivationSchedule())
    assert res.real.picks == res.sim.picks


def test_three_arm_hand_trace():
    state = hand_state(HAND)
    assert state.pool.ucb[1] < state.pool.ucb[2] < 1.0
    keys = np.random.default_rng(0).random(3)
    res = bt.verify_g2(state, 10, lambda tid: HAND_MUS[tid[0]], tie_seed=0, schedule=bt.ActivationSchedule())
    real, sim = brute_worlds(HAND, HAND_MUS, 10, keys, state.config.bounds_delta)
    # arm 2 starts widest; with true outcomes (0.3) it takes eight steps to fall below
    # arm 1, while the frozen world feeds it lcb = 0 and hands over after five
    assert real == HAND_REAL and sim == HAND_SIM
    assert res.real.picks == real and res.sim.picks == sim
    assert res.contained and res.allocation_ok


GRID_M = (1, 2, 5, 20)


@pytest.mark.parametrize("m_lead,frac", [(30, 0.9), (8, 0.75)])
def test_three_arm_exhaustive(m_lead, frac):
    checked = 0
    for m1, m2 in itertools.product(GRID_M, repeat=2):
        for s1 in range(m1 + 1):
            for s2 in range(0, m2 + 1, max(1, m2 // 4)):
                arms = [(m_lead, frac * m_lead), (m1, float(s1)), (m2, float(s2))]
                if max(s1 / m1, s2 / m2) >= frac:
                    continue
                state = hand_state(arms)
                lcb = state.pool.lcb
                # true means inside each arm's interval, at both ends and the middle
                for pos in (0.0, 0.5, 1.0):
                    mus = [lcb[i] + pos * (state.pool.ucb[i] - lcb[i]) for i in range(3)]
                    res = bt.verify_g2(state, 10, lambda tid: mus[tid[0]], tie_seed=checked,
                                       schedule=bt.ActivationSchedule())
                    keys = np.random.default_rng(checked).random(3)
                    real, sim = brute_worlds(arms, mus, 10, keys, state.config.bounds_delta)
                    assert res.real.picks == real and res.sim.picks == sim
                    assert res.contained and res.allocation_ok
                    checked += 1
    assert checked > 100


@settings(max_examples=40, deadline=None)
@given(
    arms=st.lists(st.tuples(st.integers(1, 60), st.floats(0, 1)), min_size=3, max_size=8),
    pos=st.floats(0, 1),
    seed=st.integers(0, 10_000),
)
def test_g2_containment_on_valid_states(arms, pos, seed):
    arms = [(m, round(f * m)) for m, f in arms]
    state = hand_state([(m, float(s)) for m, s in arms])
    set_bounds(state)
    mus = state.pool.lcb + pos * (state.pool.ucb - state.pool.lcb)
    res = bt.verify_g2(state, 10, lambda tid: mus[tid[0]], tie_seed=seed, schedule=bt.ActivationSchedule())
    assert res.contained
    assert res.allocation_ok
