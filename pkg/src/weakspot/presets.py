"""Named search spaces and synthetic environments with planted ground truth.

The benchmark-shaped spaces reproduce parameter schemas only.  The DyVal
forbidden-combination rule behind its published template count is not public,
so ``dyval`` ships a placeholder constraint (no depth > 8 with 4 children);
swap in your own through a config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from weakspot.space import ParamSpec, SpaceSpec, TemplateId

DYVAL_TASKS = ("arithmetic", "linear_equation", "boolean_logic", "deductive_logic", "abductive_logic")
DYVAL_ORDERS = ("topological", "reversed", "random")


def dyval_space(constraints: tuple[str, ...] = ("!(depth > 8 && children > 3)",)) -> SpaceSpec:
    return SpaceSpec(
        (
            ParamSpec.categorical("dataset_type", DYVAL_TASKS),
            ParamSpec.integer("depth", 2, 10),
            ParamSpec.integer("children", 2, 4),
            ParamSpec.integer("extra_links", 0, 3),
            ParamSpec.integer("random_desc", 0, 3),
            ParamSpec.categorical("order", DYVAL_ORDERS),
        ),
        constraints,
        name="dyval",
    )


def grid_space() -> SpaceSpec:
    """Grid-reasoning schema flattened to one parameter list.

    Island parameters are present for both task families (the real benchmark
    only uses them for largest-island), so discrete counts differ from the
    benchmark's own.
    """
    return SpaceSpec(
        (
            ParamSpec.categorical("task", ("shortest_path", "largest_island")),
            ParamSpec.integer("rows", 5, 25),
            ParamSpec.integer("cols", 5, 25),
            ParamSpec.continuous("p_blocked", 0.0, 0.5),
            ParamSpec.integer("num_islands", 1, 10),
            ParamSpec.integer("min_size", 0, 20),
            ParamSpec.integer("max_size", 0, 20),
        ),
        ("min_size <= max_size",),
        name="grid",
    )


def steerme_space() -> SpaceSpec:
    return SpaceSpec(
        (
            ParamSpec.categorical("element", [f"element_{i:02d}" for i in range(58)]),
            ParamSpec.categorical("domain", [f"domain_{i:02d}" for i in range(10)]),
            ParamSpec.categorical("type", [f"type_{i:02d}" for i in range(15)]),
        ),
        name="steerme",
    )


def index_space(n_templates: int, name: str = "index") -> SpaceSpec:
    return SpaceSpec((ParamSpec.integer("template", 0, n_templates - 1),), name=name)


@dataclass
class Environment:
    """A space plus a known mean-utility function (error-rate scale)."""

    name: str
    space: SpaceSpec
    mean_fn: Callable[[TemplateId], float]
    groups: dict[str, list[TemplateId]] = field(default_factory=dict)
    label_fn: Callable[[TemplateId], str | None] | None = None

    def true_mean(self, tid: TemplateId) -> float:
        return float(self.mean_fn(tid))


def tiered(
    tiers: list[tuple[int, float]],
    background: float = 0.30,
    n_templates: int = 1000,
    layout_seed: int = 0,
    name: str = "tiered",
) -> Environment:
    """Index space where ``tiers`` of (count, mean) arms are planted at seeded positions."""
    space = index_space(n_templates, name=name)
    planted = sum(count for count, _ in tiers)
    if planted > n_templates:
        raise ValueError("more planted arms than templates")
    means = np.full(n_templates, float(background))
    order = np.random.default_rng(layout_seed).permutation(n_templates)
    groups = {}
    start = 0
    for count, mean in tiers:
        chosen = order[start : start + count]
        means[chosen] = mean
        groups[f"mean={mean:g}"] = [(int(i),) for i in sorted(chosen)]
        start += count
    table = means.tolist()
    return Environment(name, space, lambda tid: table[tid[0]], groups)


def needles(
    n_templates: int = 1000, n_hard: int = 10, hard: float = 0.95, easy: float = 0.30, layout_seed: int = 0
) -> Environment:
    return tiered([(n_hard, hard)], background=easy, n_templates=n_templates, layout_seed=layout_seed, name="needles")


def certification_tiers(layout_seed: int = 0) -> Environment:
    """1,000 arms: ten at 0.95, ten at 0.85, the rest at 0.30."""
    return tiered([(10, 0.95), (10, 0.85)], background=0.30, layout_seed=layout_seed, name="cert_tiers")


def two_cluster(hard_a: float = 0.97, hard_b: float = 0.92, easy: float = 0.25) -> Environment:
    """Two disjoint hard regions in a 3-parameter space of 400 templates.

    Cluster A (``family=alpha``, depth >= 7, width <= 6) holds many very hard
    arms; cluster B (``family=beta``, depth >= 9, width >= 9) holds a handful
    of slightly easier ones.  Everything else sits at ``easy``.
    """
    space = SpaceSpec(
        (
            ParamSpec.categorical("family", ("alpha", "beta", "gamma", "delta")),
            ParamSpec.integer("depth", 1, 10),
            ParamSpec.integer("width", 1, 10),
        ),
        name="two_cluster",
    )

    def cluster(tid: TemplateId) -> str | None:
        family, depth, width = tid
        if family == "alpha" and depth >= 7 and width <= 6:
            return "A"
        if family == "beta" and depth >= 9 and width >= 9:
            return "B"
        return None

    def mean_fn(tid: TemplateId) -> float:
        label = cluster(tid)
        return hard_a if label == "A" else hard_b if label == "B" else easy

    groups: dict[str, list] = {"A": [], "B": []}
    for family in ("alpha", "beta", "gamma", "delta"):
        for depth in range(1, 11):
            for width in range(1, 11):
                label = cluster((family, depth, width))
                if label:
                    groups[label].append((family, depth, width))
    return Environment("two_cluster", space, mean_fn, groups, label_fn=cluster)


def dyval_synthetic(seed: int = 0) -> Environment:
    """Smooth synthetic error surface over the DyVal schema.

    Error grows with depth and shrinks with children; arithmetic is hardest.
    Useful for exercising complexity-weighted utilities end to end.
    """
    space = dyval_space()
    task_bias = dict(zip(DYVAL_TASKS, (0.25, 0.10, -0.05, -0.10, -0.15)))
    jitter = np.random.default_rng(seed).uniform(-0.05, 0.05, size=(len(DYVAL_TASKS), 11, 5))

    def mean_fn(tid: TemplateId) -> float:
        task, depth, children, links, desc, _order = tid
        base = 0.08 * depth - 0.06 * (children - 2) + 0.02 * links + 0.01 * desc + task_bias[task]
        base += jitter[DYVAL_TASKS.index(task), depth, children]
        return float(min(0.99, max(0.01, base)))

    return Environment("dyval_synthetic", space, mean_fn)


SPACES = {"dyval": dyval_space, "grid": grid_space, "steerme": steerme_space}
ENVIRONMENTS = {
    "needles": needles,
    "cert_tiers": certification_tiers,
    "two_cluster": two_cluster,
    "dyval_synthetic": dyval_synthetic,
}


def environment(name: str, **kwargs) -> Environment:
    try:
        factory = ENVIRONMENTS[name]
    except KeyError:
        raise KeyError(f"unknown environment preset {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return factory(**kwargs)
