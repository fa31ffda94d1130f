import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canopy_ledger.boosting.forest import rf_fit, rf_predict, rf_proximity
from canopy_ledger.boosting.gbr import (
    GbrConfig, cross_validate, fold_assignment, gbr_fit, gbr_predict, group_fold_assignment,
    staged_predict, weighted_median,
)
from canopy_ledger.boosting.modelio import decode_model, encode_model
from canopy_ledger.boosting.tree import fit_tree
from canopy_ledger.errors import ShapeError
from oracles import best_split_exhaustive


def trace_leaf(tree, x):
    i = 0
    while tree.left[i] != -1:
        i = tree.left[i] if x[tree.feature[i]] <= tree.threshold[i] else tree.right[i]
    return i


def test_constant_target_single_leaf(rng):
    t = fit_tree(rng.normal(size=(30, 3)), np.full(30, 0.3))
    assert t.n_nodes == 1
    assert np.all(t.predict(rng.normal(size=(5, 3))) == 0.3)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 32), st.integers(0, 10**6))
def test_first_split_matches_exhaustive(n, seed):
    r = np.random.default_rng(seed)
    x = r.integers(0, 12, n).astype(float)
    y = r.normal(size=n)
    if len(set(x)) < 2:
        return
    t = fit_tree(x[:, None], y, max_depth=1)
    thr, sse = best_split_exhaustive(list(x), list(y))
    assert t.left[0] != -1
    got = t.predict(x[:, None])
    assert float(((y - got) ** 2).sum()) == pytest.approx(sse, rel=1e-9, abs=1e-12)
    assert t.threshold[0] == pytest.approx(thr)


def test_step_function_exact_fit():
    x = np.arange(20, dtype=float)
    y = np.where(x < 10, 1.0, 3.0)
    t = fit_tree(x[:, None], y, max_depth=1)
    assert t.threshold[0] == 9.5
    np.testing.assert_array_equal(t.predict(x[:, None]), y)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_monotone_feature_transform_same_partition(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(40, 3))
    y = r.normal(size=40)
    a = fit_tree(X, y, max_depth=3)
    b = fit_tree(np.exp(X), y, max_depth=3)
    np.testing.assert_allclose(a.predict(X), b.predict(np.exp(X)), atol=1e-12)


def test_weights_equal_duplication(rng):
    X = rng.normal(size=(25, 4))
    y = rng.normal(size=25)
    dup = np.arange(8)
    w = np.ones(25)
    w[dup] = 2
    a = fit_tree(X, y, w, max_depth=4, min_samples_leaf=1)
    b = fit_tree(np.vstack([X, X[dup]]), np.concatenate([y, y[dup]]), max_depth=4, min_samples_leaf=1)
    np.testing.assert_array_equal(a.feature, b.feature)
    np.testing.assert_array_equal(a.threshold, b.threshold)
    np.testing.assert_allclose(a.value, b.value, atol=1e-12)


def test_zero_trees_is_weighted_median(rng):
    X = rng.normal(size=(7, 2))
    y = np.array([1, 2, 3, 4, 50, 60, 70.0])
    m = gbr_fit(X, y, GbrConfig(n_estimators=0))
    assert np.all(gbr_predict(m, X) == 4.0)
    assert weighted_median([1, 2], [1, 1]) == 1.5
    assert weighted_median([1, 2, 3], [1, 1, 5]) == 3.0


def test_linear_convergence(rng):
    X = rng.uniform(0, 1, (300, 2))
    y = 0.7 * X[:, 0] + 0.2 * X[:, 1]
    m = gbr_fit(X, y, GbrConfig(n_estimators=200, learning_rate=0.1, max_depth=3, min_samples_leaf=1, huber_delta=1.0))
    assert np.mean(np.abs(gbr_predict(m, X) - y)) < 0.02 * np.ptp(y)
    assert np.all(np.diff(m.train_loss) <= 1e-15)


def test_memorisation(rng):
    X = rng.normal(size=(80, 3))
    y = rng.uniform(0, 1, 80)
    m = gbr_fit(X, y, GbrConfig(n_estimators=1, learning_rate=1.0, max_depth=None, min_samples_leaf=1,
                                loss="squared"))
    np.testing.assert_allclose(gbr_predict(m, X), y, atol=1e-12)


def test_single_leaf_model_and_shape_error(rng):
    X = rng.normal(size=(10, 2))
    m = gbr_fit(X, np.full(10, 0.3), GbrConfig(n_estimators=3))
    assert np.allclose(gbr_predict(m, X), 0.3)
    with pytest.raises(ShapeError):
        gbr_predict(m, X[:, :1])


def test_permutation_and_telescoping(rng):
    X = rng.normal(size=(60, 4))
    y = X[:, 0] ** 2 + rng.normal(0, 0.1, 60)
    m = gbr_fit(X, y, GbrConfig(n_estimators=20, learning_rate=0.1, max_depth=3, min_samples_leaf=2))
    p = gbr_predict(m, X)
    perm = rng.permutation(60)
    np.testing.assert_array_equal(gbr_predict(m, X[perm]), p[perm])
    stages = dict(staged_predict(m, X))
    for t in range(1, 21):
        np.testing.assert_allclose(stages[t] - stages[t - 1], m.learning_rate * m.trees[t - 1].predict(X), atol=1e-12)


def test_model_roundtrip(rng):
    X = rng.normal(size=(50, 3))
    m = gbr_fit(X, X[:, 0], GbrConfig(n_estimators=5, max_depth=2, min_samples_leaf=2), feature_order_tag="tag")
    back = decode_model(encode_model(m))
    assert encode_model(back) == encode_model(m)
    np.testing.assert_array_equal(gbr_predict(back, X), gbr_predict(m, X))
    assert back.feature_order_tag == "tag"


def test_cv_single_config_and_empty(rng):
    X = rng.normal(size=(20, 2))
    cfg = GbrConfig(n_estimators=2, min_samples_leaf=1)
    assert cross_validate(X, X[:, 0], [cfg], k=4).best == cfg
    with pytest.raises(ValueError):
        cross_validate(X, X[:, 0], [], k=4)


def test_leave_one_out_oracle():
    X = np.arange(5, dtype=float)[:, None]
    y = np.array([0.1, 0.4, 0.2, 0.9, 0.5])
    cfg = GbrConfig(n_estimators=0)
    res = cross_validate(X, y, [cfg], k=5, seed=3)
    errs = []
    for i in range(5):
        rest = sorted(np.delete(y, i))
        errs.append(abs(0.5 * (rest[1] + rest[2]) - y[i]))
    assert res.scores[cfg] == pytest.approx(np.mean(errs), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 10), st.integers(0, 200), st.integers(0, 10**6))
def test_fold_sizes(k, extra, seed):
    n = k + extra
    sizes = np.bincount(fold_assignment(n, k, seed), minlength=k)
    assert sizes.max() - sizes.min() <= 1 and sizes.sum() == n


def test_group_folds_keep_groups_whole():
    g = np.repeat(np.arange(10), 3)
    f = group_fold_assignment(g, 5, 0)
    for grp in range(10):
        assert len(set(f[g == grp])) == 1


def blobs(rng, n=40):
    a = rng.normal(0, 0.3, (n, 2))
    b = rng.normal(5, 0.3, (n, 2))
    return np.vstack([a, b]), np.array([0] * n + [1] * n)


def test_forest_proximity_blobs(rng):
    X, lab = blobs(rng)
    m = rf_fit(X, lab, n_trees=50, seed=1)
    p = rf_proximity(m, X)
    assert np.all(np.diag(p) == 1)
    same = p[lab[:, None] == lab[None, :]].mean()
    cross = p[lab[:, None] != lab[None, :]].mean()
    assert cross + 0.2 < same
    assert (rf_predict(m, X) == lab).all()


def test_single_tree_proximity_is_leaf_comembership(rng):
    X, lab = blobs(rng, 15)
    X = X + rng.normal(0, 1.0, X.shape)
    m = rf_fit(X, lab, n_trees=1, bootstrap=False, feature_subsample=None, seed=0)
    p = rf_proximity(m, X)
    leaves = [trace_leaf(m.trees[0], x) for x in X]
    expect = np.array([[float(a == b) for b in leaves] for a in leaves])
    np.testing.assert_array_equal(p, expect)


def test_forest_vote_invariant_to_tree_order(rng):
    X, lab = blobs(rng, 20)
    X = X + rng.normal(0, 2.0, X.shape)
    m = rf_fit(X, lab, n_trees=15, seed=2)
    p = rf_predict(m, X)
    m.trees = m.trees[::-1]
    np.testing.assert_array_equal(rf_predict(m, X), p)


def test_forest_deterministic_and_single_class(rng):
    X, lab = blobs(rng, 10)
    a = rf_fit(X, lab, n_trees=5, seed=4)
    b = rf_fit(X, lab, n_trees=5, seed=4, jobs=2)
    np.testing.assert_array_equal(rf_proximity(a, X), rf_proximity(b, X))
    one = rf_fit(X, np.zeros(len(X), int), n_trees=3)
    assert np.all(rf_predict(one, X) == 0)
