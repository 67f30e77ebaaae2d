"""The eleven acceptance criteria, one test each, with their time limits.

A summary line per criterion is printed at the end of the run.
"""

import random
import time
from datetime import date

import numpy as np
import pytest

from builders import partial_hierarchy_corpus, random_ensemble, security_privacy_corpus, small_taxonomy
from oracles import brute_shapley, latest_before, pairwise_auc, similarity_oracle
from siterisk import crawler
from siterisk.attribution import tree_shap_matrix
from siterisk.crawler import CrawlPolicy, RecordedFetcher, crawl_many, crawl_site, registrable_domain
from siterisk.dataset import (
    DomainMapping,
    IncidentRecord,
    LabeledDataset,
    StubCdxClient,
    assemble_dataset,
    filter_negatives,
    name_similarity,
    negative_reference_date,
    select_snapshot,
)
from siterisk.evaluation import auc, calibration
from siterisk.features import build_schema, count_features, expand_versions
from siterisk.fingerprint import Detection, load_ruleset
from siterisk.gbdt import TrainParams, fit, kfold_cv, load_model, logistic_grad_hess, save_model, sigmoid
from siterisk.synthetic import generate_corpus, make_site, synthetic_matrix
from siterisk.taxonomy import default_taxonomy


class Timer:
    def __init__(self, limit: float):
        self.limit = limit

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.1f}s, limit {self.limit}s"


@pytest.mark.criterion(1, "hierarchy counting 14 / 20 / 37")
def test_c01_hierarchy_counting():
    with Timer(1):
        tax, corpus = partial_hierarchy_corpus()
        schema = build_schema(corpus, tax, 20)
        assert schema.n_binary == 9
        assert count_features("root", schema) == 14
        tax, corpus = security_privacy_corpus()
        schema = build_schema(corpus, tax, 20)
        assert count_features("cat:67", schema) == 20
        assert count_features("meta:Security/Privacy", schema) == 37


@pytest.mark.criterion(2, "version expansion and support pruning")
def test_c02_version_expansion_and_pruning():
    with Timer(1):
        assert expand_versions(Detection("jQuery", ("1.13.2",))) == {"jQuery", "jQuery 1", "jQuery 1.13"}
        tax = small_taxonomy({1: ("CMS", "Software Stack")})
        for support, kept in ((19, False), (20, True)):
            corpus = [(Detection("X", (), (1,)),)] * support + [(Detection("Y", (), (1,)),)] * (40 - support)
            tokens = [b.token for b in build_schema(corpus, tax, 20).binary_features]
            assert ("X" in tokens) is kept


@pytest.mark.criterion(3, "rank AUC equals exhaustive pairwise AUC")
def test_c03_auc_oracle():
    with Timer(10):
        assert auc([0.8, 0.5, 0.5, 0.2], [1, 1, 0, 0]) == 0.875
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 201))
            y = rng.integers(0, 2, n)
            y[:2] = (0, 1)
            s = rng.integers(0, max(2, n // 4), n) / 10.0  # heavy ties
            assert abs(auc(s, y) - pairwise_auc(s, y)) <= 1e-12


@pytest.mark.criterion(4, "TreeSHAP equals brute-force Shapley")
def test_c04_treeshap_exact():
    with Timer(60):
        rng = np.random.default_rng(4)
        widest = 0
        for _ in range(100):
            ens = random_ensemble(rng, max_trees=5, max_features=12, max_depth=4)
            X = rng.uniform(-1.2, 1.2, size=(3, ens.n_features))
            phi, base = tree_shap_matrix(ens, X)
            for x, p in zip(X, phi):
                assert np.max(np.abs(p - brute_shapley(ens.trees, x, ens.n_features))) <= 1e-9
            assert np.max(np.abs(phi.sum(axis=1) + base - ens.margin(X))) <= 1e-9
            widest = max(widest, len({int(f) for t in ens.trees for f in t.feature if f >= 0}))
        assert widest >= 10


@pytest.mark.criterion(5, "boosting gradients, separability, early stopping, round trip")
def test_c05_gbdt(tmp_path):
    with Timer(60):
        m = np.random.default_rng(0).uniform(-6, 6, 1000)
        y = (np.arange(1000) % 2).astype(float)
        g, h = logistic_grad_hess(m, y)
        eps = 1e-5
        loss = lambda mm: -(y * np.log(sigmoid(mm)) + (1 - y) * np.log(1 - sigmoid(mm)))
        assert np.max(np.abs((loss(m + eps) - loss(m - eps)) / (2 * eps) - g)) <= 1e-6
        gp, gm = logistic_grad_hess(m + eps, y)[0], logistic_grad_hess(m - eps, y)[0]
        assert np.max(np.abs((gp - gm) / (2 * eps) - h)) <= 1e-6

        rng = np.random.default_rng(1)
        X = rng.normal(size=(300, 5))
        ys = (X[:, 0] - X[:, 3] > 0).astype(float)
        model = fit(X, ys, TrainParams(max_rounds=50, learning_rate=0.3))
        assert auc(model.predict_proba(X), ys) == 1.0

        params = TrainParams(max_rounds=300, early_stopping_rounds=20, learning_rate=0.3)
        for seed in range(10):
            r = np.random.default_rng(100 + seed)
            Xn, Xv = r.normal(size=(300, 6)), r.normal(size=(300, 6))
            yn, yv = r.integers(0, 2, 300), r.integers(0, 2, 300)
            noisy = fit(Xn, yn, params, Xv, yv)
            assert len(noisy.trees) < params.max_rounds

        Xs, ysyn = synthetic_matrix(300, 15, seed=2)
        trained = fit(Xs, ysyn, TrainParams(max_rounds=60), Xs, ysyn, "hash")
        save_model(trained, tmp_path / "m.json")
        probe = rng.integers(0, 2, size=(1000, 15)).astype(float)
        assert np.array_equal(trained.predict_proba(probe), load_model(tmp_path / "m.json").predict_proba(probe))


def _pipeline_auc(corpus, labels) -> float:
    """Crawl the recorded corpus, build features and labels, 5-fold train, evaluate OOF AUC."""
    tax = default_taxonomy()
    ruleset = load_ruleset(corpus.ruleset_doc, tax)
    results = crawl_many([r["domain"] for r in labels], RecordedFetcher(corpus.bundles), ruleset, CrawlPolicy(),
                         max_workers=1, sleep=lambda s: None)
    crawls = {r.domain: r for r in results}
    ok_neg = set(filter_negatives([crawls[r["domain"]] for r in labels if r["label"] == 0]))
    positives = [
        (DomainMapping(IncidentRecord(r["domain"], r["source"], r["reference_date"]), r["domain"], r["domain"], 1.0, False), crawls[r["domain"]])
        for r in labels if r["label"] == 1 and crawls[r["domain"]].success
    ]
    negatives = [(r["domain"], crawls[r["domain"]], r["reference_date"]) for r in labels if r["label"] == 0 and r["domain"] in ok_neg]
    schema = build_schema([c.detections for _, c in positives] + [c.detections for _, c, _ in negatives], tax, 20)
    ds = assemble_dataset(positives, negatives, schema)
    assert len(ds) >= 1900
    cv = kfold_cv(ds, 5, TrainParams(), rng_seed=0)
    return auc([cv.oof_scores[d] for d in ds.domains], ds.y)


@pytest.mark.slow
@pytest.mark.criterion(6, "synthetic end-to-end: signal >= 0.95, permuted in [0.47, 0.53]")
def test_c06_end_to_end():
    with Timer(300):
        corpus = generate_corpus(1000, 1000, seed=0, signal=2.0)
        strong = _pipeline_auc(corpus, corpus.labels)
        perm = np.random.default_rng(0).permutation([r["label"] for r in corpus.labels])
        permuted = [{**r, "label": int(p), "source": "vcdb" if p else "negative"} for r, p in zip(corpus.labels, perm)]
        null = _pipeline_auc(corpus, permuted)
        print(f"signal AUC {strong:.4f}, permuted AUC {null:.4f}")
        assert strong >= 0.95
        assert 0.47 <= null <= 0.53


@pytest.mark.criterion(7, "out-of-fold scores never come from a model trained on the row")
def test_c07_kfold_integrity():
    with Timer(10):
        X, y = synthetic_matrix(200, 12, seed=7)
        n = len(y)
        ds = LabeledDataset([f"r{i:04d}.com" for i in range(n)], X, y, ["vcdb" if v else "negative" for v in y],
                            [None] * n, [None] * n, "h", [])
        cv = kfold_cv(ds, 5, TrainParams(max_rounds=40), rng_seed=1)
        for i, d in enumerate(ds.domains):
            f = cv.fold_assignments[d]
            assert d not in set(cv.train_manifests[f])
            assert cv.fold_models[f].predict_proba(X[i : i + 1])[0] == cv.oof_scores[d]
        assert sum(len(m) for m in cv.train_manifests) == n * (cv.k - 1)


@pytest.mark.criterion(8, "calibration of well-specified scores within 0.05")
def test_c08_calibration():
    with Timer(30):
        rng = np.random.default_rng(8)
        p = rng.random(50_000)
        y = (rng.random(50_000) < p).astype(int)
        table = calibration(p, y, 40)
        assert table.n_bins == 40
        assert table.max_deviation(500) <= 0.05


@pytest.mark.criterion(9, "name similarity matches exhaustive oracle")
def test_c09_similarity():
    with Timer(10):
        assert name_similarity("23andMe Holding Co", "23andMe") == 1.0
        rng = random.Random(9)
        alphabet = "abcd efgh"
        for _ in range(500):
            a = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12)))
            b = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12)))
            if not a.strip() or not b.strip():
                a, b = a + "x", b + "y"
            assert name_similarity(a, b) == similarity_oracle(a, b)


@pytest.mark.criterion(10, "snapshot strict-before and date-window clamping")
def test_c10_wayback():
    with Timer(1):
        url = "https://example.com/"
        rows = [["com,example)/", s, url, "text/html", "200", "D", "1"] for s in ("20230110080000", "20230120080000")]
        cdx = StubCdxClient({url: rows})
        for q, want in ((date(2023, 1, 15), "20230110080000"), (date(2023, 1, 10), None), (date(2023, 1, 21), "20230120080000")):
            snap = select_snapshot(url, q, cdx)
            oracle = latest_before(rows, q)
            assert (snap.stamp if snap else None) == want == (oracle.strftime("%Y%m%d%H%M%S") if oracle else None)
        assert all(negative_reference_date(date(2021, 5, 1), s) >= date(2022, 1, 1) for s in range(50))
        assert negative_reference_date(date(2023, 12, 31), 0) == date(2023, 12, 31)
        with pytest.raises(ValueError):
            negative_reference_date(date(2024, 3, 1), 0)


@pytest.mark.criterion(11, "crawl budgets on a 50-page site")
def test_c11_crawl_budget(monkeypatch):
    with Timer(5):
        taken = []
        original = crawler.select_links

        def recording(page, state, policy):
            links = original(page, state, policy)
            taken.append(sum(1 for u in links if u not in state.privacy_urls))
            return links

        monkeypatch.setattr(crawler, "select_links", recording)
        rs = load_ruleset({"Synth000": {"cats": [1], "html": ["<!-- synth000"]}}, default_taxonomy())
        policy = CrawlPolicy()
        for seed in range(5):
            urls = []

            class Counting(RecordedFetcher):
                def fetch(self, u):
                    urls.append(u)
                    return super().fetch(u)

            taken.clear()
            r = crawl_site("bigsite.com", Counting(make_site("bigsite.com", 50, seed=seed)), rs,
                           CrawlPolicy(rng_seed=seed), sleep=lambda s: None)
            bound = 1 + policy.max_random_links + policy.max_privacy_links + len(policy.privacy_fallback_paths) + 4
            assert r.success and len(urls) <= bound
            assert 0 < max(taken) <= policy.max_links_per_page
            assert sum(taken) <= policy.max_random_links
            assert all(registrable_domain(u) == "bigsite.com" for u in urls)
