import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakspot.constraints import ConstraintSyntaxError, parse_constraint
from weakspot.presets import dyval_space, grid_space
from weakspot.space import (
    ParamSpec,
    SpaceError,
    SpaceSpec,
    count_discrete,
    encode_features,
    enumerate_discrete,
    sample_uniform,
    validate_space,
)


def test_grid_rows_cols_range_is_valid():
    space = SpaceSpec((ParamSpec.integer("rows", 5, 25), ParamSpec.integer("cols", 5, 25)))
    assert validate_space(space) == []
    assert validate_space(grid_space()) == []


def test_empty_categorical_is_rejected():
    errors = validate_space(SpaceSpec((ParamSpec.categorical("task", []),)))
    assert any("empty categorical" in e for e in errors)


def test_constraint_on_undeclared_name_is_rejected():
    space = SpaceSpec((ParamSpec.integer("depth", 1, 3),), ("foo > 1",))
    errors = validate_space(space)
    assert errors and "foo" in errors[0]


def test_unsatisfiable_constraints_are_rejected():
    space = SpaceSpec((ParamSpec.integer("depth", 1, 3),), ("depth > 5",))
    assert validate_space(space) == ["no assignment satisfies the constraints"]


def test_dyval_count_without_constraints():
    assert count_discrete(dyval_space(constraints=())) == 5 * 9 * 3 * 4 * 4 * 3 == 6480


def test_single_categorical_count():
    assert count_discrete(SpaceSpec((ParamSpec.categorical("x", "abc"),))) == 3


def test_dyval_constrained_count_matches_brute_force():
    space = dyval_space()
    brute = 0
    for combo in itertools.product(*(p.domain().tolist() for p in space.params)):
        _, depth, children, *_ = combo
        brute += not (depth > 8 and children > 3)
    assert count_discrete(space) == brute == sum(1 for _ in enumerate_discrete(space))
    assert brute < 6480


def test_binary_param_is_uniform(rng):
    space = SpaceSpec((ParamSpec.categorical("b", ("yes", "no")),))
    draws = [sample_uniform(space, rng)[0] for _ in range(10_000)]
    assert abs(draws.count("yes") / 10_000 - 0.5) <= 0.02


def test_sampling_respects_constraints(rng):
    space = dyval_space()
    names = space.names
    for _ in range(10_000):
        values = dict(zip(names, sample_uniform(space, rng)))
        assert not (values["depth"] > 8 and values["children"] > 3)


def test_continuous_mean(rng):
    space = SpaceSpec((ParamSpec.continuous("p", 0.0, 1.0),))
    draws = np.array([sample_uniform(space, rng)[0] for _ in range(10_000)])
    assert abs(draws.mean() - 0.5) <= 0.02


def test_encoding():
    space = SpaceSpec((ParamSpec.categorical("c", ("a", "b", "c")), ParamSpec.integer("d", 2, 10)))
    vec = encode_features(space, ("b", 7))
    assert vec.tolist() == [0.0, 1.0, 0.0, 7.0]
    assert np.array_equal(vec, encode_features(space, ("b", 7)))
    with pytest.raises(SpaceError):
        encode_features(space, ("z", 7))


def test_space_roundtrip():
    space = grid_space()
    assert SpaceSpec.from_dict(space.to_dict()) == space


@pytest.mark.parametrize("bad", ["depth >", "__import__('os')", "depth.real > 1", "f(depth)", "depth = 3"])
def test_constraint_parser_rejects_non_expressions(bad):
    with pytest.raises(ConstraintSyntaxError):
        parse_constraint(bad)


@settings(max_examples=60, deadline=None)
@given(depth=st.integers(0, 12), children=st.integers(0, 6))
def test_constraint_semantics_match_python(depth, children):
    c = parse_constraint("!(depth > 8 && children > 3) || depth == 12")
    expected = (not (depth > 8 and children > 3)) or depth == 12
    assert c.holds({"depth": depth, "children": children}) == expected
