"""Random-forest surrogate over encoded template identifiers.

Trees are stored as flat arrays (split feature, threshold, children, leaf
value), padded into ``(n_trees, max_nodes)`` matrices so that prediction and
leaf lookup are single jitted loops.  The same leaf lookup gives the
shared-leaf proximity used for repulsion: two identifiers are as close as the
fraction of trees that route them to the same leaf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from weakspot.space import SpaceSpec, TemplateId, encode_many, sample_uniform

LEAF = -1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    min_leaf: int = 2
    max_features: int | None = None  # None -> ceil(sqrt(d))
    bootstrap: bool = True
    seed: int = 0


@dataclass
class ForestModel:
    """A trained (or hand-built) forest.  ``left[t, k] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    training_count_marker: int = 0
    _leaf_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.feature = np.ascontiguousarray(self.feature, dtype=np.int64)
        self.threshold = np.ascontiguousarray(self.threshold, dtype=np.float64)
        self.left = np.ascontiguousarray(self.left, dtype=np.int64)
        self.right = np.ascontiguousarray(self.right, dtype=np.int64)
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.left.ndim != 2 or self.left.shape[0] < 1:
            raise ValueError("a forest needs at least one tree")

    @property
    def n_trees(self) -> int:
        return self.left.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index of every row in every tree, shape ``(rows, n_trees)``."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X: np.ndarray) -> np.ndarray:
        leaves = self.apply(X)
        return self.value[np.arange(self.n_trees), leaves].mean(axis=1)

    def leaves_for(self, space: SpaceSpec, ids: Sequence[TemplateId]) -> np.ndarray:
        """Cached leaf lookup for identifiers."""
        missing = [tid for tid in ids if tid not in self._leaf_cache]
        if missing:
            for tid, row in zip(missing, self.apply(encode_many(space, missing))):
                self._leaf_cache[tid] = row
        if not ids:
            return np.zeros((0, self.n_trees), dtype=np.int64)
        return np.vstack([self._leaf_cache[tid] for tid in ids])


@numba.njit(cache=True)
def _apply(X, feature, threshold, left, right):
    rows = X.shape[0]
    trees = left.shape[0]
    out = np.empty((rows, trees), dtype=np.int64)
    for r in range(rows):
        for t in range(trees):
            node = 0
            while left[t, node] != -1:
                if X[r, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[r, t] = node
    return out


@numba.njit(cache=True)
def _grow_tree(X, y, rows, max_features, min_leaf, feature, threshold, left, right, value):
    """Grow one regression tree on ``rows`` (indices into X, duplicates allowed).

    Writes nodes into the given arrays and returns the node count.
    """
    n_features = X.shape[1]
    idx = rows.copy()
    capacity = left.shape[0]
    stack_node = np.empty(capacity, dtype=np.int64)
    stack_lo = np.empty(capacity, dtype=np.int64)
    stack_hi = np.empty(capacity, dtype=np.int64)
    order = np.arange(n_features)
    n_nodes = 1
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = idx.shape[0]
    top = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        size = hi - lo
        total = 0.0
        sq = 0.0
        for k in range(lo, hi):
            total += y[idx[k]]
            sq += y[idx[k]] * y[idx[k]]
        value[node] = total / size
        left[node] = -1
        right[node] = -1
        feature[node] = 0
        threshold[node] = 0.0
        if size < 2 * min_leaf or sq - total * total / size <= 1e-12:
            continue
        # random feature order; examine at least max_features, keep going if none splits
        for k in range(n_features - 1, 0, -1):
            j = np.random.randint(0, k + 1)
            tmp = order[k]
            order[k] = order[j]
            order[j] = tmp
        best_gain = 0.0
        best_feat = -1
        best_thr = 0.0
        xs = np.empty(size)
        ys = np.empty(size)
        for pos in range(n_features):
            if pos >= max_features and best_feat >= 0:
                break
            f = order[pos]
            for k in range(size):
                xs[k] = X[idx[lo + k], f]
            perm = np.argsort(xs, kind="mergesort")
            for k in range(size):
                ys[k] = y[idx[lo + perm[k]]]
            left_sum = 0.0
            for k in range(size - 1):
                left_sum += ys[k]
                n_left = k + 1
                n_right = size - n_left
                if n_left < min_leaf or n_right < min_leaf:
                    continue
                x_here = xs[perm[k]]
                x_next = xs[perm[k + 1]]
                if x_next <= x_here:
                    continue
                right_sum = total - left_sum
                gain = left_sum * left_sum / n_left + right_sum * right_sum / n_right - total * total / size
                if gain > best_gain + 1e-12:
                    best_gain = gain
                    best_feat = f
                    best_thr = 0.5 * (x_here + x_next)
        if best_feat < 0:
            continue
        # partition idx[lo:hi] around the threshold
        i = lo
        j = hi - 1
        while i <= j:
            if X[idx[i], best_feat] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top] = n_nodes
        stack_lo[top] = lo
        stack_hi[top] = i
        top += 1
        stack_node[top] = n_nodes + 1
        stack_lo[top] = i
        stack_hi[top] = hi
        top += 1
        n_nodes += 2
    return n_nodes


@numba.njit(cache=True)
def _grow_forest(X, y, n_trees, max_features, min_leaf, bootstrap, seed, capacity):
    np.random.seed(seed)
    n = X.shape[0]
    feature = np.zeros((n_trees, capacity), dtype=np.int64)
    threshold = np.zeros((n_trees, capacity))
    left = np.full((n_trees, capacity), -1, dtype=np.int64)
    right = np.full((n_trees, capacity), -1, dtype=np.int64)
    value = np.zeros((n_trees, capacity))
    used = 0
    for t in range(n_trees):
        if bootstrap:
            rows = np.empty(n, dtype=np.int64)
            for k in range(n):
                rows[k] = np.random.randint(0, n)
        else:
            rows = np.arange(n)
        count = _grow_tree(X, y, rows, max_features, min_leaf, feature[t], threshold[t], left[t], right[t], value[t])
        if count > used:
            used = count
    return feature[:, :used], threshold[:, :used], left[:, :used], right[:, :used], value[:, :used]


def train(X: np.ndarray, y: np.ndarray, params: ForestParams = ForestParams(), marker: int = 0) -> ForestModel:
    """Fit a forest on rows ``X`` with targets ``y`` in [0, 1]."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("cannot train a forest on an empty training set")
    if X.shape[0] != y.shape[0]:
        raise ValueError("feature and target lengths differ")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("targets must lie in [0, 1]")
    d = X.shape[1]
    max_features = params.max_features or max(1, math.ceil(math.sqrt(d)))
    capacity = 2 * X.shape[0] + 1
    arrays = _grow_forest(
        X, y, params.n_trees, min(max_features, d), params.min_leaf, params.bootstrap, params.seed % (2**32), capacity
    )
    return ForestModel(*arrays, training_count_marker=marker)


def retrain_due(model: ForestModel | None, configs_with_two_samples: int) -> bool:
    if model is None:
        return configs_with_two_samples >= 1
    return configs_with_two_samples > model.training_count_marker


def propose(
    model: ForestModel | None,
    space: SpaceSpec,
    rng: np.random.Generator,
    k: int = 64,
    exclude: set | dict | None = None,
) -> TemplateId:
    """Best of ``k`` uniform candidates under the model (uniform draw if no model).

    Candidates already in ``exclude`` are skipped when anything else is left.
    """
    if model is None:
        return sample_uniform(space, rng)
    candidates = [sample_uniform(space, rng) for _ in range(k)]
    if exclude:
        fresh = [c for c in candidates if c not in exclude]
        candidates = fresh or candidates
    scores = model.predict(encode_many(space, candidates))
    best = np.flatnonzero(scores == scores.max())
    pick = best[0] if best.size == 1 else best[int(rng.integers(best.size))]
    return candidates[pick]


def proximity_from_leaves(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(a == b))


def proximity(model: ForestModel, space: SpaceSpec, a: TemplateId, b: TemplateId) -> float:
    leaves = model.apply(encode_many(space, [a, b]))
    return proximity_from_leaves(leaves[0], leaves[1])


def max_proximity(candidate_leaves: np.ndarray, reference_leaves: np.ndarray) -> np.ndarray:
    """For each candidate row, the largest shared-leaf fraction to any reference row."""
    if reference_leaves.shape[0] == 0 or candidate_leaves.shape[0] == 0:
        return np.zeros(candidate_leaves.shape[0])
    shared = (candidate_leaves[:, None, :] == reference_leaves[None, :, :]).mean(axis=2)
    return shared.max(axis=1)
