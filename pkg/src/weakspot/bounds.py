"""Per-arm sufficient statistics and anytime Hoeffding confidence bounds.

The per-arm confidence level shrinks with both the pool size ``n`` and the
arm's own sample count ``m``::

    delta_i = delta / (26.71 * n**2 * m**2)

and the bound is two-sided Hoeffding on utilities in [0, 1]::

    radius = sqrt(log(2 / delta_i) / (2 * m))

Arms with no samples get the vacuous interval (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ALLOCATION_CONSTANT = 26.71
REFRESH_GROWTH = 1.5
REFRESH_MIN_SAMPLES = 2


@dataclass(frozen=True)
class ArmStats:
    m: int = 0
    total: float = 0.0

    @property
    def mean(self) -> float | None:
        return self.total / self.m if self.m > 0 else None


@dataclass(frozen=True)
class Bounds:
    lcb: float = 0.0
    ucb: float = 1.0
    delta_i: float | None = None
    pool_size_at_compute: int = 0


def per_arm_delta(delta: float, n: int, m_i: int) -> float:
    if m_i < 1:
        raise ValueError("per-arm delta needs at least one sample (m_i >= 1)")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if n < 1:
        raise ValueError(f"pool size must be >= 1, got {n}")
    return delta / (ALLOCATION_CONSTANT * n * n * m_i * m_i)


def radius(m, delta: float, n: int):
    """Hoeffding radius for sample count(s) ``m`` (scalar or array, all >= 1)."""
    m = np.asarray(m, dtype=np.float64)
    d_i = delta / (ALLOCATION_CONSTANT * n * n * m * m)
    return np.sqrt(np.log(2.0 / d_i) / (2.0 * m))


def compute_bounds(stats: ArmStats, delta: float, n: int) -> Bounds:
    if stats.m == 0:
        return Bounds(0.0, 1.0, None, n)
    d_i = per_arm_delta(delta, n, stats.m)
    r = math.sqrt(math.log(2.0 / d_i) / (2.0 * stats.m))
    mean = stats.total / stats.m
    return Bounds(max(0.0, mean - r), min(1.0, mean + r), d_i, n)


def bounds_arrays(m: np.ndarray, total: np.ndarray, delta: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`compute_bounds` returning ``(lcb, ucb)`` arrays."""
    m = np.asarray(m)
    lcb = np.zeros(m.shape)
    ucb = np.ones(m.shape)
    seen = m > 0
    if np.any(seen):
        ms = m[seen].astype(np.float64)
        mean = np.asarray(total, dtype=np.float64)[seen] / ms
        r = radius(ms, delta, n)
        lcb[seen] = np.maximum(0.0, mean - r)
        ucb[seen] = np.minimum(1.0, mean + r)
    return lcb, ucb


def bounds_scalar(m: int, total: float, delta: float, n: int) -> tuple[float, float]:
    """Fast scalar path used inside selection loops; same numbers as :func:`compute_bounds`."""
    if m <= 0:
        return 0.0, 1.0
    d_i = delta / (ALLOCATION_CONSTANT * n * n * m * m)
    r = math.sqrt(math.log(2.0 / d_i) / (2.0 * m))
    mean = total / m
    return max(0.0, mean - r), min(1.0, mean + r)


def record_observation(stats: ArmStats, y: float) -> ArmStats:
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"utility {y} outside [0, 1]")
    return ArmStats(stats.m + 1, stats.total + y)


def refresh_due(current_pool_size: int, last_refresh_pool_size: int) -> bool:
    return current_pool_size >= REFRESH_GROWTH * last_refresh_pool_size


def deferred_refresh(m, total, lcb, ucb, computed_at, delta: float, pool_size: int, last_refresh_pool_size: int):
    """Recompute bounds for arms with >= 2 samples once the pool has grown 1.5x.

    Operates in place on the given arrays.  Returns ``(refreshed, marker)``
    where ``marker`` is the pool size to compare against next time.
    """
    if not refresh_due(pool_size, last_refresh_pool_size):
        return False, last_refresh_pool_size
    eligible = np.flatnonzero(np.asarray(m) >= REFRESH_MIN_SAMPLES)
    if eligible.size:
        lo, hi = bounds_arrays(m[eligible], total[eligible], delta, pool_size)
        lcb[eligible] = lo
        ucb[eligible] = hi
        computed_at[eligible] = pool_size
    return True, pool_size
