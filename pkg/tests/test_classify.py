import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from beamsense import classify as clf
from beamsense.classify.tree import _best_split, max_entropy
from beamsense.features import FeatureVector


def ds(X, y, classes=()):
    return clf.Dataset(np.asarray(X, dtype=float), y, classes)


def xor_data():
    X = [[0, 0], [0, 1], [1, 0], [1, 1]] * 3
    y = ["a", "b", "b", "a"] * 3
    return ds(X, y)


def brute_best_gain(d):
    """Exhaustive gain maximum over every feature and midpoint threshold."""
    best = 0.0
    for f in range(d.d):
        v = np.unique(d.rows[:, f])
        for lo, hi in zip(v[:-1], v[1:]):
            best = max(best, clf.info_gain(d, f, 0.5 * (lo + hi)))
    return best


# entropy and gain

def test_entropy_examples():
    assert clf.entropy(["a"] * 5) == 0.0
    assert clf.entropy(["a", "b"] * 3) == pytest.approx(1.0)
    assert clf.entropy([0, 0, 1, 1, 1, 2, 2, 2]) == pytest.approx(1.5613, abs=1e-4)
    with pytest.raises(ValueError):
        clf.entropy([])


def test_info_gain_examples():
    y = ["a", "a", "a", "a", "b", "b", "b", "b"]
    sep = ds(np.arange(8.0), y)
    assert clf.info_gain(sep, 0, 3.5) == pytest.approx(1.0)
    # left {a, a}, right {a, a, b, b, b, b}
    assert clf.info_gain(sep, 0, 1.5) == pytest.approx(1.0 - 0.75 * 0.9183, abs=1e-4)
    indep = ds([0, 1, 0, 1, 0, 1, 0, 1], y)
    assert clf.info_gain(indep, 0, 0.5) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        clf.info_gain(sep, 0, 100.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=40))
def test_entropy_bounds(labels):
    h = clf.entropy(labels)
    assert 0 <= h <= max_entropy(len(set(labels))) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 30), st.integers(1, 4), st.integers(2, 3))
def test_best_split_matches_exhaustive_search(seed, n, d, k):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 5, size=(n, d)).astype(float)
    y = rng.integers(0, k, size=n)
    data = ds(X, [str(v) for v in y])
    split = _best_split(data.rows, data.y, len(data.classes), np.arange(d))
    if split is None:
        assert all(np.unique(X[:, f]).size == 1 for f in range(d))
        return
    f, thr, g = split
    assert g == pytest.approx(brute_best_gain(data), abs=1e-12)
    assert g == pytest.approx(clf.info_gain(data, f, thr), abs=1e-12)
    parent = clf.entropy(data.y)
    assert -1e-12 <= g <= parent + 1e-12


# trees

def test_single_class_is_one_leaf():
    t = clf.train_tree(ds([[1.0], [2.0], [3.0]], ["a"] * 3))
    assert t.feature.tolist() == [-1]
    assert t.predict([[7.0]]) == ["a"]


def test_separable_1d_depth_one():
    X = np.arange(-5.0, 5.0)[:, None]
    y = ["neg" if v < 0 else "pos" for v in X[:, 0]]
    t = clf.train_tree(ds(X, y))
    assert t.depth == 1
    assert t.threshold[0] == pytest.approx(-0.5)
    assert t.predict(X) == y


def test_xor_needs_two_levels():
    data = xor_data()
    stump = clf.train_tree(data, max_depth=1)
    assert np.mean(np.array(stump.predict(data.rows)) == np.array(data.labels)) <= 0.5
    t = clf.train_tree(data, max_depth=2)
    assert t.predict(data.rows) == list(data.labels)


def test_tree_respects_depth_and_leaf_distributions():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, 4))
    y = [str(v) for v in rng.integers(0, 3, 80)]
    t = clf.train_tree(ds(X, y), max_depth=3)
    assert t.depth <= 3
    assert_allclose(t.value.sum(axis=1), 1.0)
    internal = np.flatnonzero(t.feature >= 0)
    assert np.all(t.n_samples[t.left[internal]] > 0)
    assert np.all(t.n_samples[t.right[internal]] > 0)
    assert_array_equal(t.n_samples[t.left[internal]] + t.n_samples[t.right[internal]],
                       t.n_samples[internal])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40))
def test_unlimited_tree_fits_consistent_data(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n, 3)).astype(float)
    _, first = np.unique(X, axis=0, return_inverse=True)
    # labels as a function of the row keep the data consistent
    y = [str(int(v) % 3) for v in first.ravel()]
    t = clf.train_tree(ds(X, y), max_depth=None)
    assert t.predict(X) == y


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_tree_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(-20, 20, size=(40, 3)).astype(float)
    y = [str(v) for v in rng.integers(0, 2, 40)]
    f = lambda A: A ** 3 + 3 * A  # strictly increasing, exact on these integers
    a = clf.train_tree(ds(X, y), max_depth=None)
    b = clf.train_tree(ds(f(X), y), max_depth=None)
    # midpoint thresholds move under the transform, so compare on the sorted
    # training values where both trees cut between the same neighbours
    assert a.predict(X) == b.predict(f(X))
    assert_array_equal(a.feature, b.feature)


def test_predict_schema_and_feature_vector():
    rng = np.random.default_rng(1)
    data = ds(rng.normal(size=(20, 6)), ["a", "b"] * 10)
    t = clf.train_tree(data)
    fv = FeatureVector(0.01, -14.8, 0.2, -14.9, 3.0, 0.1)
    assert clf.predict(t, fv) in ("a", "b")
    with pytest.raises(ValueError):
        t.predict(np.zeros((1, 5)))


# forests

def noisy_separable(seed, n=120):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    X = rng.normal(size=(n, 6))
    X[:, 0] += 1.5 * y
    X[:, 3] += 0.8 * y
    return ds(X, ["lo" if v == 0 else "hi" for v in y], ("lo", "hi"))


def test_single_tree_forest_equals_tree():
    data = noisy_separable(0)
    tree = clf.train_tree(data, max_depth=None)
    forest = clf.train_forest(data, n_trees=1, max_features=data.d, seed=5, bootstrap=False)
    Xt = np.random.default_rng(9).normal(size=(200, 6))
    assert forest.predict(Xt) == tree.predict(Xt)
    assert_array_equal(forest.trees[0].threshold, tree.threshold)


def test_forest_deterministic_under_seed():
    data = noisy_separable(1)
    a = clf.train_forest(data, n_trees=15, seed=3)
    b = clf.train_forest(data, n_trees=15, seed=3)
    assert clf.dumps(a) == clf.dumps(b)
    c = clf.train_forest(data, n_trees=15, seed=4)
    assert clf.dumps(a) != clf.dumps(c)


def test_identical_trees_vote_like_one():
    data = noisy_separable(2)
    t = clf.train_tree(data, max_depth=3)
    forest = clf.RandomForest((t, t, t), max_features=6)
    X = np.random.default_rng(0).normal(size=(50, 6))
    assert forest.predict(X) == t.predict(X)


def test_vote_aggregation():
    votes = np.array([[0, 0, 1], [2, 1, 0], [1, 1, 0], [0, 1, 2, 2][:3]])
    assert clf.aggregate_votes(votes, 3).tolist() == [0, 0, 1, 0]
    assert clf.aggregate_votes(votes, 3, "median").tolist() == [0, 1, 1, 1]
    with pytest.raises(ValueError):
        clf.aggregate_votes(votes, 3, "mean")


def test_forest_validation():
    data = noisy_separable(3, 20)
    with pytest.raises(ValueError):
        clf.train_forest(data, n_trees=0)
    with pytest.raises(ValueError):
        clf.train_forest(data, max_features=7)
    assert clf.default_max_features(6) == 3


def test_forest_at_least_as_good_as_shallow_tree():
    tree_acc, forest_acc = [], []
    for s in range(20):
        data = noisy_separable(100 + s, 80)
        tr, te = clf.stratified_split(data.labels, 0.5, s)
        test_labels = [data.labels[i] for i in te]
        t = clf.train_tree(data.subset(tr), max_depth=3)
        f = clf.train_forest(data.subset(tr), n_trees=100, seed=s)
        tree_acc.append(clf.evaluate(t.predict(data.rows[te]), test_labels).accuracy)
        forest_acc.append(clf.evaluate(f.predict(data.rows[te]), test_labels).accuracy)
    assert np.mean(forest_acc) >= np.mean(tree_acc)


def test_importance_finds_planted_feature():
    rng = np.random.default_rng(0)
    n = 200
    y = rng.integers(0, 2, n)
    X = np.column_stack([y + 0.3 * rng.normal(size=n)] + [rng.normal(size=n) for _ in range(5)])
    X = X[:, [3, 1, 0, 4, 2, 5]]  # informative feature sits in column 2
    f = clf.train_forest(ds(X, [str(v) for v in y]), n_trees=50, seed=1)
    imp = clf.feature_importance(f)
    assert imp.sum() == pytest.approx(1.0, abs=1e-9)
    assert int(np.argmax(imp)) == 2
    assert imp[2] > 0.5


def test_importance_rejects_untrained():
    with pytest.raises(TypeError):
        clf.feature_importance(object())


# knn and naive Bayes

def test_knn_memorises_and_degenerates():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(15, 3))
    y = ["a"] * 4 + ["b"] * 7 + ["c"] * 4
    data = ds(X, y)
    m1 = clf.train_knn(data, k=1)
    assert m1.predict(X) == y
    mn = clf.train_knn(data, k=15)
    assert set(mn.predict(rng.normal(size=(20, 3)))) == {"b"}
    with pytest.raises(ValueError):
        clf.train_knn(data, k=16)


def test_gnb_far_gaussians():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(0, 1, 100), rng.normal(10, 1, 100)])[:, None]
    y = ["a"] * 100 + ["b"] * 100
    tr, te = clf.stratified_split(y, 0.5, 0)
    m = clf.train_gnb(ds(X, y).subset(tr))
    acc = clf.evaluate(m.predict(X[te]), [y[i] for i in te]).accuracy
    assert acc >= 0.99


def test_gnb_symmetric_posterior_tie():
    m = clf.GnbModel([0.5, 0.5], [[0.0], [2.0]], [[1.0], [1.0]], ("a", "b"))
    assert_allclose(m.posterior([[1.0]]), [[0.5, 0.5]])
    assert m.predict([[1.0]]) == ["a"]


def test_gnb_variance_floor():
    m = clf.train_gnb(ds([[1.0], [1.0], [2.0], [2.0]], ["a", "a", "b", "b"]))
    assert np.all(m.variances >= clf.simple.VAR_FLOOR)
    assert m.predict([[1.0], [2.0]]) == ["a", "b"]


# metrics

def test_evaluate_hand_confusion():
    labels = ["1", "1", "1", "0", "0", "0"]
    preds = ["1", "1", "0", "1", "0", "0"]  # TP=2, FN=1, FP=1, TN=2
    m = clf.evaluate(preds, labels, ("0", "1"))
    assert m.precision["1"] == 2 / 3
    assert m.recall["1"] == 2 / 3
    assert m.f1["1"] == 2 / 3
    assert m.accuracy == 4 / 6
    assert m.confusion.tolist() == [[2, 1], [1, 2]]


def test_evaluate_perfect_and_flags():
    m = clf.evaluate(["a", "b"], ["a", "b"])
    assert m.accuracy == m.macro_f1 == 1.0
    m = clf.evaluate(["a", "a"], ["a", "b"], ("a", "b"))
    assert m.precision["b"] == 0 and "b" in m.no_predicted_positives
    with pytest.raises(ValueError):
        clf.evaluate(["a"], ["a", "b"])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("abc")), min_size=1,
                max_size=40))
def test_evaluate_invariants(pairs):
    labels, preds = zip(*pairs)
    m = clf.evaluate(preds, labels, tuple("abc"))
    assert m.accuracy == pytest.approx(np.trace(m.confusion) / len(labels))
    for c, row in zip("abc", m.confusion):
        assert row.sum() == labels.count(c)
    for v in (m.accuracy, m.macro_f1, m.macro_recall, *m.f1.values()):
        assert 0 <= v <= 1
    off_diag = m.confusion.sum() - np.trace(m.confusion)
    assert (m.macro_f1 == pytest.approx(1.0)) == (off_diag == 0)


# serialization and holdout

@pytest.mark.parametrize("name", ["tree", "forest", "knn", "gnb"])
def test_model_roundtrip(name):
    data = noisy_separable(4, 40)
    model = clf.TRAINERS[name](data, 0)
    back = clf.loads(clf.dumps(model))
    X = np.random.default_rng(2).normal(size=(30, 6))
    assert back.predict(X) == model.predict(X)


def test_loads_rejects_unknown_version():
    doc = clf.model_to_dict(clf.train_gnb(noisy_separable(5, 20)))
    doc["format_version"] = 999
    with pytest.raises(ValueError):
        clf.model_from_dict(doc)


def test_stratified_split_and_holdout():
    y = ["a"] * 10 + ["b"] * 6
    tr, te = clf.stratified_split(y, 0.5, 0)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(16))
    assert [y[i] for i in tr].count("a") == 5 and [y[i] for i in tr].count("b") == 3
    data = noisy_separable(6, 60)
    r1 = clf.repeated_holdout(data, "tree", 5, 0.5, 11)
    r2 = clf.repeated_holdout(data, "tree", 5, 0.5, 11)
    assert r1.summary() == r2.summary()
    assert r1.summary()["repetitions"] == 5
