import numpy as np

from weakspot.space import ParamSpec, SpaceSpec, sample_uniform
from weakspot.surrogate import ForestModel, ForestParams, max_proximity, propose, proximity, retrain_due, train

LINE = SpaceSpec((ParamSpec.integer("x", 0, 9),))
PLANE = SpaceSpec((ParamSpec.integer("x", 0, 19), ParamSpec.integer("y", 0, 19)))


def stump_forest(thresholds):
    """One split on feature 0 per tree: node 0 splits, nodes 1/2 are leaves."""
    t = len(thresholds)
    return ForestModel(
        feature=np.zeros((t, 3)),
        threshold=np.array([[th, 0, 0] for th in thresholds]),
        left=np.tile([1, -1, -1], (t, 1)),
        right=np.tile([2, -1, -1], (t, 1)),
        value=np.tile([0.5, 0.0, 1.0], (t, 1)),
    )


def test_proximity_to_self_is_one():
    model = stump_forest([4.5, 2.5])
    for x in range(10):
        assert proximity(model, LINE, (x,), (x,)) == 1.0


def test_single_split_separates():
    assert proximity(stump_forest([4.5]), LINE, (2,), (7,)) == 0.0


def test_four_trees_three_shared():
    # a=3, b=6 share a leaf unless the split falls between them
    model = stump_forest([8.5, 1.5, 0.5, 4.5])
    assert proximity(model, LINE, (3,), (6,)) == 0.75
    leaves = model.apply(np.array([[3.0], [6.0], [9.0]]))
    assert max_proximity(leaves[:1], leaves[1:]).tolist() == [0.75]


def test_single_example_gives_constant_model():
    model = train(np.array([[1.0, 2.0]]), np.array([0.7]))
    pred = model.predict(np.random.default_rng(0).random((20, 2)) * 10)
    assert np.all(pred == pred[0]) and abs(pred[0] - 0.7) < 1e-12


def two_clusters(rng):
    lo = rng.uniform(0, 1, size=(40, 2))
    hi = rng.uniform(5, 6, size=(40, 2))
    return np.vstack([lo, hi]), np.r_[np.zeros(40), np.ones(40)]


def test_separated_clusters_are_learned(rng):
    X, y = two_clusters(rng)
    model = train(X, y, ForestParams(n_trees=50, seed=1))
    assert np.all(np.abs(model.predict(rng.uniform(0, 1, (30, 2)))) <= 0.1)
    assert np.all(np.abs(model.predict(rng.uniform(5, 6, (30, 2))) - 1) <= 0.1)


def test_training_is_deterministic(rng):
    X, y = two_clusters(rng)
    probe = rng.uniform(0, 6, (50, 2))
    a = train(X, y, ForestParams(n_trees=20, seed=4)).predict(probe)
    b = train(X, y, ForestParams(n_trees=20, seed=4)).predict(probe)
    assert np.array_equal(a, b)


def test_leaves_are_valid_for_every_row(rng):
    X, y = two_clusters(rng)
    model = train(X, y, ForestParams(n_trees=10, seed=2))
    leaves = model.apply(rng.uniform(-10, 10, (200, 2)))
    for t in range(model.n_trees):
        assert np.all(model.left[t, leaves[:, t]] == -1)


def test_retrain_trigger():
    model = stump_forest([1.0])
    model.training_count_marker = 10
    assert not retrain_due(model, 10)
    assert retrain_due(model, 11)
    assert retrain_due(None, 1)
    assert not retrain_due(None, 0)


def test_no_model_falls_back_to_uniform():
    ra, rb = np.random.default_rng(7), np.random.default_rng(7)
    assert [propose(None, PLANE, ra) for _ in range(50)] == [sample_uniform(PLANE, rb) for _ in range(50)]


def test_constant_model_is_indifferent():
    # with all scores tied, the pick is uniform among candidates, which are themselves uniform
    flat = ForestModel(np.zeros((1, 1)), np.zeros((1, 1)), -np.ones((1, 1)), -np.ones((1, 1)), np.full((1, 1), 0.3))
    rng = np.random.default_rng(3)
    xs = np.array([propose(flat, LINE, rng, k=8)[0] for _ in range(5000)])
    counts = np.bincount(xs, minlength=10) / 5000
    assert np.all(np.abs(counts - 0.1) < 0.02)


def test_planted_region_attracts_proposals(rng):
    X = np.array([[x, y] for x in range(20) for y in range(20)], dtype=float)
    y = ((X[:, 0] >= 15) & (X[:, 1] >= 15)).astype(float)
    model = train(X, y, ForestParams(n_trees=30, seed=0))
    hits = sum(1 for _ in range(500) if min(propose(model, PLANE, rng, k=64)) >= 15)
    assert hits / 500 >= 0.9
