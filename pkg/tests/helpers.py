"""Shared helpers: hand-built run states over a small index space."""

from __future__ import annotations

import numpy as np

from weakspot import bounds as B
from weakspot import optimizer as opt
from weakspot.config import RunConfig
from weakspot.presets import index_space


def hand_state(arms, n_templates: int = 100, **config) -> opt.RunState:
    """State whose pool holds ``arms`` = [(m, total), ...] as templates 0, 1, ...

    Bounds are computed at the resulting pool size, exactly as a refresh would.
    """
    space = index_space(n_templates)
    cfg = RunConfig(space=space.to_dict(), n0=max(1, len(arms)), budget_total=0, **config)
    rng_select, rng_propose = opt.make_rngs(cfg.seed)
    state = opt.RunState(cfg, space, opt.ArmPool(), rng_select, rng_propose)
    for j, (m, total) in enumerate(arms):
        i = state.pool.add((j,))
        state.pool._buf["m"][i] = m
        state.pool._buf["total"][i] = total
        state.uniform_proposals += 1
    set_bounds(state)
    state.last_refresh_pool_size = state.pool.n
    return state


def set_bounds(state: opt.RunState, n: int | None = None) -> None:
    pool = state.pool
    n = pool.n if n is None else n
    for i in range(pool.n):
        pool._buf["lcb"][i], pool._buf["ucb"][i] = B.bounds_scalar(
            int(pool.m[i]), float(pool.total[i]), state.config.bounds_delta, n
        )
        pool._buf["computed_at"][i] = n


def set_arm(state: opt.RunState, i: int, lcb: float, ucb: float, m: int = 10, mean: float | None = None) -> None:
    """Overwrite one arm's bounds directly (for selection tests that only care about scores)."""
    pool = state.pool
    pool._buf["m"][i] = m
    pool._buf["total"][i] = (lcb + ucb) / 2 * m if mean is None else mean * m
    pool._buf["lcb"][i] = lcb
    pool._buf["ucb"][i] = ucb


def brute_worlds(arms, mus, k, keys, delta):
    """Sequential challenger steps in the true-mean and frozen-lcb worlds.

    Written directly from the definitions as an independent reference for
    the batching verifier: the leader is the top empirical mean, the
    challenger the top ucb among the rest, ties go to the largest key.
    """
    n = len(arms)
    m0 = [a[0] for a in arms]
    t0 = [a[1] for a in arms]
    lcb0 = [B.compute_bounds(B.ArmStats(m, t), delta, n).lcb for m, t in zip(m0, t0)]
    means = [t / m if m else 0.0 for m, t in zip(m0, t0)]
    top = max(means)
    leader = max((i for i in range(n) if means[i] == top), key=lambda i: keys[i])
    worlds = []
    for outcome in (lambda i: mus[i], lambda i: lcb0[i]):
        m, tot = list(m0), list(t0)
        picks = []
        for _ in range(k):
            ucbs = {i: B.compute_bounds(B.ArmStats(m[i], tot[i]), delta, n).ucb for i in range(n) if i != leader}
            best = max(ucbs.values())
            c = max((i for i in ucbs if ucbs[i] == best), key=lambda i: keys[i])
            m[c] += 1
            tot[c] += outcome(c)
            picks.append(c)
        worlds.append(picks)
    return worlds


# three-arm instance traced by hand: leader, then two challengers below ucb 1
HAND = [(200, 180.0), (60, 30.0), (25, 10.0)]
HAND_MUS = [0.9, 0.55, 0.3]
HAND_REAL = [2] * 8 + [1, 2]
HAND_SIM = [2] * 5 + [1, 1, 1, 2, 1]

# acceptance verdicts, printed again in the terminal summary
ACCEPTANCE: list[str] = []
