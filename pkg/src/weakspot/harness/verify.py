"""Monte Carlo verification suites: bound coverage and the two batching guarantees."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import binomtest

from weakspot import batching as bt
from weakspot import presets
from weakspot.bounds import ALLOCATION_CONSTANT
from weakspot.config import RunConfig
from weakspot.harness.run import run
from weakspot.oracle import SyntheticBackend


@dataclass
class SuiteResult:
    suite: str
    trials: int
    failures: int
    delta: float
    passed: bool
    p_value: float
    notes: dict

    @property
    def fraction(self) -> float:
        return self.failures / self.trials if self.trials else 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["fraction"] = self.fraction
        return out


def _excess_p(failures: int, trials: int, delta: float) -> float:
    """One-sided p-value for "failure rate exceeds delta"."""
    if trials == 0:
        return 1.0
    return float(binomtest(failures, trials, delta, alternative="greater").pvalue)


def coverage_suite(
    runs: int = 10_000, arms: int = 20, draws: int = 2_000, delta: float = 0.01, seed: int = 0, chunk: int = 500
) -> SuiteResult:
    """Fraction of mini-runs in which some arm's true mean ever leaves [lcb, ucb].

    Each mini-run has ``arms`` Bernoulli arms with uniformly drawn means and
    spends ``draws`` samples on uniformly chosen arms; bounds use the pool
    size ``arms`` and are checked after every update.
    """
    rng = np.random.default_rng(seed)
    failures = 0
    for start in range(0, runs, chunk):
        r = min(chunk, runs - start)
        mu = rng.random((r, arms))
        pick = rng.integers(0, arms, size=(r, draws))
        y = (rng.random((r, draws)) < np.take_along_axis(mu, pick, axis=1)).astype(np.float64)
        bad = np.zeros(r, dtype=bool)
        for a in range(arms):
            hit = pick == a
            m = np.cumsum(hit, axis=1)
            tot = np.cumsum(y * hit, axis=1)
            mm = np.maximum(m, 1).astype(np.float64)
            d_i = delta / (ALLOCATION_CONSTANT * arms * arms * mm * mm)
            rad = np.sqrt(np.log(2.0 / d_i) / (2.0 * mm))
            mean = tot / mm
            lcb = np.maximum(0.0, mean - rad)
            ucb = np.minimum(1.0, mean + rad)
            mu_a = mu[:, a : a + 1]
            out = hit & ((lcb > mu_a) | (ucb < mu_a))
            bad |= out.any(axis=1)
        failures += int(bad.sum())
    p = _excess_p(failures, runs, delta)
    return SuiteResult("coverage", runs, failures, delta, failures / runs <= delta, p,
                       {"arms": arms, "draws": draws})


def _warm_state(seed: int, warmup: int, environment: str, batch_size: int):
    env = presets.environment(environment)
    config = RunConfig(
        space={"preset": environment},
        backend={"kind": "synthetic", "environment": environment},
        surrogate=False,
        seed=seed,
        batch_size=batch_size,
    )
    state, _ = run(config, backend=SyntheticBackend(env.mean_fn, seed), space=env.space, stop_at=warmup)
    return state, env


def g1_suite(
    seeds: int = 1_000, n: int = 20, environment: str = "needles", max_warmup: int = 100, delta: float = 0.01
) -> SuiteResult:
    """Frozen-bound ucb check on states reached after 1..``max_warmup`` real batches."""
    violated = 0
    unexplained = 0
    invalid = 0
    steps = 0
    for seed in range(seeds):
        state, env = _warm_state(seed, 1 + seed % max_warmup, environment, n)
        res = bt.verify_g1(state, n, env.true_mean)
        steps += res.steps
        invalid += not res.lcb_valid
        if res.violated:
            violated += 1
            unexplained += res.lcb_valid
    passed = unexplained == 0 and violated / seeds <= delta
    return SuiteResult("g1", seeds, violated, delta, passed, _excess_p(violated, seeds, delta),
                       {"unexplained": unexplained, "lcb_invalid_seeds": invalid, "steps": steps})


def g2_suite(
    seeds: int = 500, k: int = 10, environment: str = "needles", max_warmup: int = 100, delta: float = 0.01
) -> SuiteResult:
    """Challenger-set check: S_real within S_sim, with lower allocation when strict."""
    not_contained = 0
    strict = 0
    allocation_bad = 0
    for seed in range(seeds):
        state, env = _warm_state(seed, 1 + seed % max_warmup, environment, 2 * k)
        res = bt.verify_g2(state, k, env.true_mean, tie_seed=seed)
        if not res.contained:
            not_contained += 1
        elif res.strict:
            strict += 1
            allocation_bad += not res.allocation_ok
    passed = not_contained / seeds <= delta and allocation_bad == 0
    return SuiteResult("g2", seeds, not_contained, delta, passed, _excess_p(not_contained, seeds, delta),
                       {"strict": strict, "allocation_failures": allocation_bad})


SUITES = {"coverage": coverage_suite, "g1": g1_suite, "g2": g2_suite}
