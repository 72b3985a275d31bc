"""Jitted inner loops shared by the sequential optimizer and batch construction.

Tie-breaking convention: a pick receives one uniform ``u`` and returns the
``floor(u * count)``-th tied index in pool order, so every pick consumes
exactly one random number whether or not ties occur.  When ``use_keys`` is
set, ties go to the largest entry of ``keys`` instead (used to couple two
simulated worlds).
"""

from __future__ import annotations

import math

import numba
import numpy as np

from weakspot.bounds import ALLOCATION_CONSTANT


@numba.njit(cache=True)
def pick(score, mask, u, keys, use_keys):
    n = score.shape[0]
    best = -np.inf
    count = 0
    for i in range(n):
        if mask[i]:
            s = score[i]
            if s > best or count == 0:
                best = s
                count = 1
            elif s == best:
                count += 1
    if count == 0:
        return -1
    if use_keys:
        chosen = -1
        for i in range(n):
            if mask[i] and score[i] == best and (chosen < 0 or keys[i] > keys[chosen]):
                chosen = i
        return chosen
    target = min(int(u * count), count - 1)
    for i in range(n):
        if mask[i] and score[i] == best:
            if target == 0:
                return i
            target -= 1
    return -1


@numba.njit(cache=True)
def means(m, total):
    out = np.zeros(m.shape[0])
    for i in range(m.shape[0]):
        if m[i] > 0:
            out[i] = total[i] / m[i]
    return out


@numba.njit(cache=True)
def leader_group(m, total, lcb, available, k, u, keys, use_keys, ring):
    """Exploitation-side arm and the boolean mask of arms barred from challenging.

    ``k`` = 0 is plain LUCB (leader = best empirical mean).  ``k`` >= 1 takes
    the top-``k`` by mean (ties by ``keys``, else by ``ring`` rotated by
    ``u``) and samples its member with the smallest lcb.
    """
    n = m.shape[0]
    mu = means(m, total)
    excluded = np.zeros(n, dtype=np.bool_)
    if k <= 0:
        lead = pick(mu, available, u, keys, use_keys)
        if lead >= 0:
            excluded[lead] = True
        return lead, excluded
    cand = np.flatnonzero(available)
    if cand.shape[0] == 0:
        return -1, excluded
    sec = np.empty(cand.shape[0])
    for j in range(cand.shape[0]):
        if use_keys:
            sec[j] = keys[cand[j]]
        else:
            sec[j] = (ring[cand[j]] + u) % 1.0
    first = np.argsort(-sec, kind="mergesort")
    ordered = cand[first]
    second = np.argsort(-mu[ordered], kind="mergesort")
    top = min(k, cand.shape[0])
    for j in range(top):
        excluded[ordered[second[j]]] = True
    lead = pick(-lcb, excluded, u, keys, use_keys)
    return lead, excluded


@numba.njit(cache=True)
def challenger(ucb, penalty, use_penalty, available, excluded, u, keys, use_keys):
    n = ucb.shape[0]
    mask = available & ~excluded
    if use_penalty:
        score = np.empty(n)
        for i in range(n):
            score[i] = ucb[i] - penalty[i]
        return pick(score, mask, u, keys, use_keys)
    return pick(ucb, mask, u, keys, use_keys)


@numba.njit(cache=True)
def control(lcb, ucb, available):
    """Incumbent (highest lcb, first on ties) and epsilon over available arms."""
    inc = -1
    best_l = -np.inf
    best_u = -np.inf
    for i in range(lcb.shape[0]):
        if available[i]:
            if inc < 0 or lcb[i] > best_l:
                best_l = lcb[i]
                inc = i
            if ucb[i] > best_u:
                best_u = ucb[i]
    if inc < 0:
        return -1, 1.0
    return inc, max(0.0, best_u - best_l)


@numba.njit(cache=True)
def bound_pair(m, total, delta, n):
    if m <= 0:
        return 0.0, 1.0
    d_i = delta / (ALLOCATION_CONSTANT * n * n * m * m)
    r = math.sqrt(math.log(2.0 / d_i) / (2.0 * m))
    mean = total / m
    return max(0.0, mean - r), min(1.0, mean + r)


@numba.njit(cache=True)
def shadow_update(m, total, lcb, ucb, i, y, delta, n):
    m[i] += 1
    total[i] += y
    lo, hi = bound_pair(m[i], total[i], delta, n)
    lcb[i] = lo
    ucb[i] = hi


@numba.njit(cache=True)
def schedule_rounds(
    m, total, lcb, ucb, available, ring, penalty, use_penalty, frozen, k, uniforms, start, half,
    expected, delta, n_bound, c, gamma, check_expansion,
):
    """Run simulated leader/challenger rounds ``start..half`` in place.

    Stops *before* selecting in the first round where the expansion condition
    (or a shortage of arms) calls for a new arm, returning that round;
    returns ``half + 1`` when every round ran.  Round ``t`` uses
    ``uniforms[2t-2]`` and ``uniforms[2t-1]`` for its two tie-breaks.
    """
    keys = np.zeros(0)
    for t in range(start, half + 1):
        if check_expansion:
            n_avail = 0
            for i in range(available.shape[0]):
                if available[i]:
                    n_avail += 1
            _, eps = control(lcb, ucb, available)
            if n_avail < k + 2 or (c > 0 and eps * eps <= c * gamma):
                return t
        lead, excluded = leader_group(m, total, lcb, available, k, uniforms[2 * t - 2], keys, False, ring)
        if lead < 0:
            continue
        chal = challenger(ucb, penalty, use_penalty, available, excluded, uniforms[2 * t - 1], keys, False)
        for i in (lead, chal):
            if i < 0:
                continue
            if expected:
                y = total[i] / m[i] if m[i] > 0 else 0.0
            else:
                y = frozen[i]
            shadow_update(m, total, lcb, ucb, i, y, delta, n_bound)
    return half + 1


@numba.njit(cache=True)
def challenger_rounds(
    m, total, lcb, ucb, available, penalty, use_penalty, excluded, frozen, uniforms, start, stop, delta, n_bound, picks
):
    """Frozen-outcome challenger steps ``start..stop`` (inclusive, 1-based) in place.

    Writes the chosen arm of step ``t`` to ``picks[t - 1]`` and returns the
    first step with no eligible challenger (``stop + 1`` if none).
    """
    keys = np.zeros(0)
    for t in range(start, stop + 1):
        c = challenger(ucb, penalty, use_penalty, available, excluded, uniforms[t], keys, False)
        if c < 0:
            return t
        shadow_update(m, total, lcb, ucb, c, frozen[c], delta, n_bound)
        picks[t - 1] = c
    return stop + 1
