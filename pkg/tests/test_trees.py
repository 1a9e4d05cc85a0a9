import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odorcast.trees import (
    DecisionTreeClassifier,
    DecisionTreeRegressor,
    ForestClassifier,
    ForestRegressor,
    RecursiveFeatureEliminator,
    UnsupervisedForestProximity,
    gini_importance,
    recursive_feature_elimination,
    rfe_schedule,
    unsupervised_distance,
)


def exact_gini_gain(x, y, thr):
    """Impurity decrease of splitting at ``x <= thr`` with rational arithmetic."""

    def gini(labels):
        n = len(labels)
        return 1 - sum(Fraction(labels.count(c), n) ** 2 for c in set(labels))

    left = [c for v, c in zip(x, y) if v <= thr]
    right = [c for v, c in zip(x, y) if v > thr]
    n = len(y)
    return gini(list(y)) - Fraction(len(left), n) * gini(left) - Fraction(len(right), n) * gini(right)


def exhaustive_best_gain(X, y):
    best = Fraction(0)
    for j in range(X.shape[1]):
        xs = sorted(set(X[:, j].tolist()))
        for a, b in zip(xs, xs[1:]):
            best = max(best, exact_gini_gain(X[:, j].tolist(), list(y), Fraction(a + b) / 2))
    return best


def test_midpoint_split_example():
    tree = DecisionTreeClassifier().fit([[1], [2], [8], [9]], [0, 0, 1, 1]).tree_
    assert tree.node_count == 3 and tree.threshold[0] == 5.0
    assert tree.impurity[1] == 0 and tree.impurity[2] == 0


def test_pure_and_constant_inputs_give_single_leaf():
    assert DecisionTreeClassifier().fit([[1], [2], [3]], [1, 1, 1]).tree_.node_count == 1
    tree = DecisionTreeClassifier().fit([[5], [5], [5], [5]], [0, 1, 0, 1]).tree_
    assert tree.node_count == 1 and list(tree.value[0]) == [2, 2]


def test_tie_break_lowest_feature_then_threshold():
    X = np.array([[0, 0], [1, 1], [2, 2], [3, 3]], dtype=float)
    tree = DecisionTreeClassifier().fit(X, [0, 0, 1, 1]).tree_
    assert tree.feature[0] == 0 and tree.threshold[0] == 1.5
    # two equally good thresholds on one feature: the lower one wins
    tree = DecisionTreeClassifier().fit([[0], [1], [2]], [0, 1, 0]).tree_
    assert tree.threshold[0] == 0.5


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_root_split_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    n, p = rng.integers(4, 30), rng.integers(1, 4)
    X = rng.integers(0, 6, size=(n, p)).astype(float)
    y = rng.integers(0, 3, n)
    tree = DecisionTreeClassifier().fit(X, y).tree_
    best = exhaustive_best_gain(X, y)
    if tree.feature[0] < 0:
        assert best == 0
    else:
        chosen = exact_gini_gain(X[:, tree.feature[0]].tolist(), list(y), Fraction(tree.threshold[0]))
        assert chosen == best


def test_regression_root_split_exhaustive():
    rng = np.random.default_rng(3)
    for _ in range(50):
        X = rng.integers(0, 8, size=(20, 3)).astype(float)
        y = rng.integers(0, 10, 20).astype(float)
        tree = DecisionTreeRegressor().fit(X, y).tree_

        def sse(v):
            v = [Fraction(int(t)) for t in v]
            m = sum(v) / len(v) if v else 0
            return sum((t - m) ** 2 for t in v)

        def gain(j, thr):
            mask = X[:, j] <= thr
            return sse(y) - sse(y[mask]) - sse(y[~mask])

        best = max(
            gain(j, (a + b) / 2)
            for j in range(3)
            for a, b in zip(sorted(set(X[:, j])), sorted(set(X[:, j]))[1:])
        )
        assert gain(tree.feature[0], tree.threshold[0]) == best


def test_training_rows_recovered_by_full_tree():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 3))
    y = rng.integers(0, 2, 60)
    model = DecisionTreeClassifier().fit(X, y)
    assert np.array_equal(model.predict(X), y)


def test_leaf_counts_sum_to_samples():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 4))
    y = (X[:, 0] > 0).astype(int)
    tree = ForestClassifier(n_estimators=3, min_samples_split=10).fit(X, y).trees_[0]
    leaves = tree.is_leaf
    assert np.array_equal(tree.value[leaves].sum(axis=1), tree.n_samples[leaves])
    internal = ~leaves
    assert np.all(tree.left[internal] >= 0) and np.all(tree.right[internal] >= 0)


def test_extra_trees_skip_constant_feature_and_are_reproducible():
    rng = np.random.default_rng(4)
    X = np.column_stack([np.ones(40), rng.normal(size=40)])
    y = (X[:, 1] > 0.3).astype(int)
    a = DecisionTreeClassifier(splitter="random", random_state=7).fit(X, y).tree_
    b = DecisionTreeClassifier(splitter="random", random_state=7).fit(X, y).tree_
    assert np.all(a.feature[a.feature >= 0] == 1)
    assert np.array_equal(a.threshold, b.threshold, equal_nan=True)
    assert a.impurity[a.is_leaf].max() == 0


def test_forest_probability_rules():
    X = np.array([[0.0], [1.0]])
    y = np.array([0, 1])
    f = ForestClassifier(n_estimators=2, algorithm="et").fit(X, y)
    f.trees_ = [
        DecisionTreeClassifier().fit([[0], [1]], [0, 1]).tree_,
        DecisionTreeClassifier().fit([[0], [1]], [1, 0]).tree_,
    ]
    assert list(f.predict_proba([[0.5]])[0]) == [0.5, 0.5]
    assert f.predict([[0.5]])[0] == 0


def test_forest_identical_stumps_equal_single_tree():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    f = ForestClassifier(n_estimators=5, algorithm="et", max_features=None).fit(X, y)
    stump = DecisionTreeClassifier().fit(X, y)
    f.trees_ = [stump.tree_] * 5
    assert np.array_equal(f.predict_proba(X), stump.predict_proba(X))


def test_forest_defaults_and_bootstrap():
    assert ForestClassifier().n_estimators == 1000 and ForestRegressor().n_estimators == 200
    rng = np.random.default_rng(5)
    X = rng.normal(size=(30, 2))
    y = rng.integers(0, 2, 30)
    rf = ForestClassifier(n_estimators=1, algorithm="rf", max_features=None).fit(X, y)
    boot = np.random.default_rng(rf.tree_seeds_[0]).integers(0, 30, 30)
    single = DecisionTreeClassifier().fit(X[boot], y[boot])
    assert np.array_equal(rf.predict(X), single.predict(X))
    et = ForestClassifier(n_estimators=1, algorithm="et").fit(X, y)
    assert et.trees_[0].n_samples[0] == 30


def test_forest_threads_and_serialization_are_deterministic():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(120, 5))
    y = (X[:, 0] * X[:, 1] > 0).astype(int)
    models = [ForestClassifier(n_estimators=12, algorithm=a, random_state=9, n_jobs=j).fit(X, y) for a in ("rf", "et") for j in (1, 4)]
    trees = [json.dumps(m.to_dict()["trees"]) for m in models]
    assert trees[0] == trees[1] and trees[2] == trees[3]
    back = ForestClassifier.from_dict(json.loads(models[0].to_json()))
    assert np.array_equal(back.predict_proba(X), models[0].predict_proba(X))


def test_forest_regressor_mean_of_leaves():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(50, 2))
    y = X[:, 0] * 3
    f = ForestRegressor(n_estimators=4, algorithm="et").fit(X, y)
    per_tree = [t.value[t.apply(X), 0] for t in f.trees_]
    assert np.allclose(f.predict(X), np.mean(per_tree, axis=0))


def test_dimension_mismatch():
    f = ForestClassifier(n_estimators=2).fit(np.zeros((4, 2)) + np.arange(4)[:, None], [0, 1, 0, 1])
    with pytest.raises(ValueError, match="features"):
        f.predict(np.zeros((1, 3)))


def test_gini_importance_rules():
    X = np.column_stack([np.r_[np.zeros(5), np.ones(5)], np.arange(10.0) % 3])
    y = X[:, 0].astype(int)
    model = DecisionTreeClassifier().fit(X, y)
    assert list(gini_importance(model)) == [1.0, 0.0]
    rng = np.random.default_rng(8)
    f = ForestClassifier(n_estimators=10).fit(rng.normal(size=(60, 4)), rng.integers(0, 2, 60))
    assert abs(f.feature_importances_.sum() - 1) < 1e-9
    with pytest.raises(TypeError):
        gini_importance(ForestRegressor(n_estimators=2).fit(X, X[:, 0]))


def test_proximity_matrix_properties():
    rng = np.random.default_rng(9)
    a = rng.normal(0, 0.3, size=(15, 3))
    b = rng.normal(4, 0.3, size=(15, 3))
    X = np.vstack([a, b, a[:1]])
    D = unsupervised_distance(X, n_estimators=60, master_seed=1)
    assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0)
    assert D.min() >= 0 and D.max() <= 1
    assert D[0, 30] == 0  # duplicate row
    within = np.r_[D[:15, :15][np.triu_indices(15, 1)], D[15:30, 15:30][np.triu_indices(15, 1)]].mean()
    between = D[:15, 15:30].mean()
    assert within < between


def test_proximity_is_thread_independent():
    X = np.random.default_rng(10).normal(size=(25, 3))
    D1 = UnsupervisedForestProximity(n_estimators=20, random_state=3, n_jobs=1).fit_transform(X)
    D4 = UnsupervisedForestProximity(n_estimators=20, random_state=3, n_jobs=4).fit_transform(X)
    assert np.array_equal(D1, D4)


def test_rfe_schedule():
    drops = rfe_schedule(781, 50, 30)
    assert len(drops) == 16 and drops[-1] == 1 and sum(drops) == 751
    assert rfe_schedule(40, 50, 30) == [10]
    with pytest.raises(ValueError):
        rfe_schedule(30, 50, 30)


def test_rfe_keeps_informative_feature():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(200, 12))
    y = (X[:, 7] > 0).astype(int)
    assert recursive_feature_elimination(X, y, step=3, target=1, n_estimators=30) == [7]
    rfe = RecursiveFeatureEliminator(n_features_to_select=4, step=3, n_estimators=20).fit(X, y)
    assert rfe.support_.sum() == 4 and rfe.transform(X).shape == (200, 4)
