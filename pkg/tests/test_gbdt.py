import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import pairwise_auc, traverse
from builders import random_ensemble
from siterisk.dataset import LabeledDataset
from siterisk.gbdt import (
    SchemaMismatch,
    TrainingError,
    TrainParams,
    TreeEnsemble,
    ensemble_proba,
    fit,
    kfold_cv,
    load_model,
    log_loss,
    logistic_grad_hess,
    predict,
    quantile_cuts,
    save_model,
    sigmoid,
    stratified_folds,
)
from siterisk.features import FeatureVector
from siterisk.synthetic import synthetic_matrix


@pytest.mark.parametrize(
    "margin,label,g,h",
    [(0.0, 1, -0.5, 0.25), (0.0, 0, 0.5, 0.25), (2.0, 1, -0.1192, 0.1050)],
)
def test_grad_hess_examples(margin, label, g, h):
    gg, hh = logistic_grad_hess(np.array([margin]), np.array([float(label)]))
    assert gg[0] == pytest.approx(g, abs=1e-4)
    assert hh[0] == pytest.approx(h, abs=1e-4)


def _loss(m, y):
    return -(y * np.log(sigmoid(m)) + (1 - y) * np.log(1 - sigmoid(m)))


def test_grad_hess_finite_differences():
    rng = np.random.default_rng(0)
    m = rng.uniform(-6, 6, 500)
    y = rng.integers(0, 2, 500).astype(float)
    g, h = logistic_grad_hess(m, y)
    eps = 1e-5
    fd_g = (_loss(m + eps, y) - _loss(m - eps, y)) / (2 * eps)
    assert np.max(np.abs(fd_g - g)) < 1e-6
    # hessian checked as the derivative of the gradient
    gp, _ = logistic_grad_hess(m + eps, y)
    gm, _ = logistic_grad_hess(m - eps, y)
    assert np.max(np.abs((gp - gm) / (2 * eps) - h)) < 1e-6


def separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = (X[:, 0] + 0.5 * X[:, 2] > 0).astype(float)
    return X, y


def test_separable_reaches_auc_one_with_monotone_loss():
    X, y = separable()
    model = fit(X, y, TrainParams(max_rounds=50, learning_rate=0.3))
    assert len(model.trees) <= 50
    assert pairwise_auc(model.predict_proba(X), y) == 1.0
    losses = []
    margin = np.full(len(y), model.base_margin)
    for t in model.trees:
        margin = margin + t.predict(X)
        losses.append(log_loss(y, margin))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_early_stopping_on_noise_labels():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        X, Xv = rng.normal(size=(300, 6)), rng.normal(size=(300, 6))
        y, yv = rng.integers(0, 2, 300), rng.integers(0, 2, 300)
        p = TrainParams(max_rounds=500, early_stopping_rounds=20, learning_rate=0.3)
        model = fit(X, y, p, Xv, yv)
        assert len(model.trees) < p.max_rounds
        assert len(model.trees) - 1 - model.best_round == p.early_stopping_rounds
        assert model.history[model.best_round] == min(model.history)


def test_stump_limit():
    X, y = separable()
    model = fit(X, y, TrainParams(max_leaves=2, max_rounds=10))
    assert all(t.n_leaves <= 2 for t in model.trees)


def test_max_leaves_respected():
    X, y = synthetic_matrix(300, 10, seed=1)
    model = fit(X, y, TrainParams(max_leaves=7, max_rounds=15))
    assert max(t.n_leaves for t in model.trees) <= 7


def test_empty_ensemble_predicts_half():
    model = TreeEnsemble([], 0.0, -1, "h", n_features=3)
    np.testing.assert_allclose(model.predict_proba(np.zeros((4, 3))), 0.5)


def test_single_class_rejected():
    with pytest.raises(TrainingError):
        fit(np.zeros((5, 2)), np.ones(5))
    with pytest.raises(TrainingError):
        fit(np.zeros((5, 2)), np.array([0, 1, 2, 0, 1]))


def test_bad_params_rejected():
    with pytest.raises(ValueError):
        TrainParams(learning_rate=0)
    with pytest.raises(ValueError):
        TrainParams(grow_policy="depthwise")


def test_predictions_match_tree_walk_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        ens = random_ensemble(rng)
        X = rng.uniform(-1.2, 1.2, size=(50, ens.n_features))
        X[rng.random(X.shape) < 0.1] = np.nan
        want = [ens.base_margin + sum(traverse(t, x) for t in ens.trees) for x in X]
        np.testing.assert_allclose(ens.margin(X), want, rtol=0, atol=1e-12)


def test_round_trip_bit_identical(tmp_path):
    X, y = synthetic_matrix(200, 12, seed=2)
    model = fit(X, y, TrainParams(max_rounds=40), X, y, "abc123")
    save_model(model, tmp_path / "m.json", {"tool": "t"})
    again = load_model(tmp_path / "m.json")
    rng = np.random.default_rng(0)
    probe = rng.integers(0, 2, size=(1000, 12)).astype(float)
    probe[rng.random(probe.shape) < 0.05] = np.nan
    assert np.array_equal(model.predict_proba(probe), again.predict_proba(probe))
    assert again.best_round == model.best_round and again.schema_hash == "abc123"


def test_schema_mismatch_names_both_hashes():
    model = TreeEnsemble([], 0.0, -1, "aaaa", n_features=2)
    with pytest.raises(SchemaMismatch) as exc:
        predict(model, FeatureVector(np.zeros(2), "bbbb"))
    assert "aaaa" in str(exc.value) and "bbbb" in str(exc.value)
    assert predict(model, FeatureVector(np.zeros(2), "aaaa")) == 0.5


def test_quantile_cuts():
    assert list(quantile_cuts(np.array([0.0, 1.0, 1.0, 0.0]), 32)) == [1.0]
    assert quantile_cuts(np.array([3.0, 3.0]), 32).size == 0
    cuts = quantile_cuts(np.arange(1000.0), 8)
    assert 1 <= cuts.size <= 7 and np.all(np.diff(cuts) > 0)


# -- cross validation ----------------------------------------------------------


def as_dataset(X, y, prefix="d"):
    n = len(y)
    return LabeledDataset(
        [f"{prefix}{i:04d}.com" for i in range(n)], X, np.asarray(y, dtype=int), ["vcdb" if v else "negative" for v in y],
        [None] * n, [None] * n, "hash", [],
    )


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.integers(2, 6), st.integers(0, 10**6))
def test_stratified_folds_balanced(n_pos, n_neg, k, seed):
    if min(n_pos, n_neg) < k:
        with pytest.raises(TrainingError):
            stratified_folds([1] * n_pos + [0] * n_neg, k, seed)
        return
    y = np.array([1] * n_pos + [0] * n_neg)
    f = stratified_folds(y, k, seed)
    for sel in (slice(None), y == 1, y == 0):
        counts = np.bincount(f[sel], minlength=k)
        assert counts.max() - counts.min() <= 1


def test_kfold_small_balanced_and_deterministic():
    X = np.arange(8, dtype=float)[:, None]
    ds = as_dataset(X, [1, 1, 1, 1, 0, 0, 0, 0])
    p = TrainParams(max_rounds=5)
    a = kfold_cv(ds, 2, p, rng_seed=4)
    b = kfold_cv(ds, 2, p, rng_seed=4)
    assert a.fold_assignments == b.fold_assignments and a.oof_scores == b.oof_scores
    for i in range(2):
        members = [d for d, f in a.fold_assignments.items() if f == i]
        assert sum(ds.y[ds.domains.index(d)] for d in members) == 2 and len(members) == 4


def test_kfold_manifest_audit():
    X, y = synthetic_matrix(60, 8, seed=5)
    ds = as_dataset(X, y)
    cv = kfold_cv(ds, 5, TrainParams(max_rounds=30))
    assert set(cv.oof_scores) == set(ds.domains)
    for d, f in cv.fold_assignments.items():
        assert d not in cv.train_manifests[f]
        assert all(d in cv.train_manifests[j] for j in range(cv.k) if j != f)
        idx = ds.domains.index(d)
        assert cv.fold_models[f].predict_proba(ds.X[idx : idx + 1])[0] == cv.oof_scores[d]
    mean = ensemble_proba(cv.fold_models, ds.X)
    assert mean.shape == (len(y),) and np.all((mean > 0) & (mean < 1))
