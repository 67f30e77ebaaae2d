import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import partial_hierarchy_corpus, random_ensemble, random_tree
from oracles import brute_shapley, cond_expectation
from siterisk.attribution import (
    AttributionVector,
    ModelIntegrityError,
    expected_value,
    global_importance,
    group_contributions,
    group_index,
    tree_shap,
    tree_shap_matrix,
    tree_shap_single,
)
from siterisk.features import FeatureVector, build_schema
from siterisk.gbdt import TrainParams, TreeEnsemble, _TreeBuilder, fit
from siterisk.synthetic import synthetic_matrix


def stump(feature=0, threshold=0.5, lv=-1.0, rv=2.0, lc=3.0, rc=1.0, default_left=True):
    b = _TreeBuilder()
    root = b.add_leaf(0.0, lc + rc)
    left, right = b.add_leaf(lv, lc), b.add_leaf(rv, rc)
    b.make_split(root, feature, threshold, default_left, left, right)
    return b.build()


def test_matches_brute_force_on_random_ensembles():
    rng = np.random.default_rng(11)
    for _ in range(30):
        ens = random_ensemble(rng)
        X = rng.uniform(-1.2, 1.2, size=(5, ens.n_features))
        phi, base = tree_shap_matrix(ens, X)
        for x, p in zip(X, phi):
            np.testing.assert_allclose(p, brute_shapley(ens.trees, x, ens.n_features), rtol=0, atol=1e-9)
        assert base == pytest.approx(ens.base_margin + sum(cond_expectation(t, X[0], set()) for t in ens.trees), abs=1e-12)
        np.testing.assert_allclose(phi.sum(axis=1) + base, ens.margin(X), rtol=0, atol=1e-9)


def test_single_leaf_tree_has_zero_attribution():
    b = _TreeBuilder()
    b.add_leaf(0.7, 5.0)
    tree = b.build()
    assert np.all(tree_shap_single(tree, np.ones((3, 4)), 4) == 0)
    assert expected_value(tree) == 0.7


def test_stump_closed_form():
    t = stump()
    # E = (3*-1 + 1*2)/4 = -0.25; left branch gives -1 - (-0.25)
    phi = tree_shap_single(t, np.array([[0.0, 9.0], [1.0, 9.0]]), 2)
    np.testing.assert_allclose(phi, [[-0.75, 0.0], [2.25, 0.0]])


def test_missing_value_follows_default_direction():
    t_left, t_right = stump(default_left=True), stump(default_left=False)
    nan = np.array([[np.nan]])
    np.testing.assert_allclose(tree_shap_single(t_left, nan, 1), tree_shap_single(t_left, np.array([[0.0]]), 1))
    np.testing.assert_allclose(tree_shap_single(t_right, nan, 1), tree_shap_single(t_right, np.array([[1.0]]), 1))


def test_zero_cover_is_integrity_error():
    with pytest.raises(ModelIntegrityError):
        tree_shap_single(stump(lc=0.0, rc=0.0), np.zeros((1, 1)), 1)


def test_unused_feature_gets_zero():
    rng = np.random.default_rng(0)
    X, y = synthetic_matrix(150, 6, seed=0)
    X[:, 5] = 0.0
    ens = fit(X, y, TrainParams(max_rounds=20))
    phi, _ = tree_shap_matrix(ens, X[:50])
    assert np.all(phi[:, 5] == 0)


def test_additivity_over_ensembles():
    rng = np.random.default_rng(2)
    t1, t2 = random_tree(rng, 4, 3), random_tree(rng, 4, 3)
    X = rng.uniform(-1, 1, (20, 4))
    both = TreeEnsemble([t1, t2], 0.0, 1, "h", n_features=4)
    np.testing.assert_allclose(
        tree_shap_matrix(both, X)[0], tree_shap_single(t1, X, 4) + tree_shap_single(t2, X, 4), atol=1e-12
    )


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_local_accuracy_trained_model(seed):
    X, y = synthetic_matrix(80, 8, seed=seed % 1000)
    ens = fit(X, y, TrainParams(max_rounds=8, max_leaves=8))
    phi, base = tree_shap_matrix(ens, X)
    np.testing.assert_allclose(phi.sum(axis=1) + base, ens.margin(X), rtol=0, atol=1e-9)


def test_tree_shap_checks_schema():
    ens = TreeEnsemble([stump()], 0.0, 0, "aaa", n_features=1)
    with pytest.raises(ValueError):
        tree_shap(ens, FeatureVector(np.zeros(1), "bbb"))
    a = tree_shap(ens, FeatureVector(np.zeros(1), "aaa"))
    assert a.output == pytest.approx(ens.margin(np.zeros((1, 1)))[0])


# -- groups --------------------------------------------------------------------


@pytest.fixture
def schema():
    tax, corpus = partial_hierarchy_corpus()
    return build_schema(corpus, tax, 20)


def test_group_sums_count_shared_members_once_per_group(schema):
    phi = np.zeros(schema.width)
    phi[0] = 1.0  # Lodash sits in both CMS and JavaScript libraries
    groups = {g.group_key: g.value for g in group_contributions(AttributionVector(phi, 0.0), schema)}
    assert groups["cat:1"] == groups["cat:2"] == groups["meta:Software Stack"] == groups["tech:Lodash"] == 1.0
    assert groups["cat:3"] == 0.0


def test_cancelling_group_and_sign_symmetry(schema):
    phi = np.zeros(schema.width)
    phi[7], phi[8] = 0.4, -0.4  # CookieYes vs OneTrust
    attr = AttributionVector(phi, 0.0)
    groups = {g.group_key: g.value for g in group_contributions(attr, schema)}
    assert groups["cat:3"] == 0.0 and groups["tech:CookieYes"] == 0.4
    flipped = {g.group_key: g.value for g in group_contributions(AttributionVector(-phi, 0.0), schema)}
    assert all(flipped[k] == -v for k, v in groups.items())


def test_group_width_mismatch(schema):
    with pytest.raises(ValueError):
        group_contributions(AttributionVector(np.zeros(3), 0.0), schema)


def test_group_index_levels(schema):
    levels = {key: level for key, level, _ in group_index(schema)}
    assert levels["meta:Security/Privacy"] == "meta" and levels["tech:jQuery"] == "technology"
    members = {key: idx for key, _, idx in group_index(schema)}
    assert members["tech:WordPress"] == [1, 2, 3]


def test_global_importance_ranks_and_ties():
    vals = np.array([[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]])
    assert global_importance(vals, ["a", "b", "c"]) == [("b", 2.0, 1), ("a", 1.0, 2), ("c", 0.5, 3)]
    assert [r[0] for r in global_importance(np.ones((2, 3)))] == ["0", "1", "2"]


def test_vectorized_oracle_agrees_with_recursive_definition():
    from oracles import coalition_values

    rng = np.random.default_rng(21)
    for _ in range(10):
        ens = random_ensemble(rng)
        x = rng.uniform(-1.2, 1.2, ens.n_features)
        used = sorted({int(f) for t in ens.trees for f in t.feature if f >= 0})
        coalitions = rng.random((30, len(used))) < 0.5
        got = coalition_values(ens.trees, x, coalitions, used)
        for row, v in zip(coalitions, got):
            known = {f for f, on in zip(used, row) if on}
            assert v == pytest.approx(sum(cond_expectation(t, x, known) for t in ens.trees), abs=1e-12)
