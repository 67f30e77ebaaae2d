"""Shapley attributions for one site, summed over technologies, categories and meta-categories."""

import numpy as np

from siterisk.attribution import group_contributions, global_importance, group_index, tree_shap, tree_shap_matrix
from siterisk.crawler import CrawlPolicy, RecordedFetcher, crawl_many
from siterisk.features import build_schema, vectorize, vectorize_many
from siterisk.fingerprint import load_ruleset
from siterisk.gbdt import TrainParams, fit
from siterisk.synthetic import generate_corpus
from siterisk.taxonomy import default_taxonomy

corpus = generate_corpus(300, 300, seed=2)
taxonomy = default_taxonomy()
rules = load_ruleset(corpus.ruleset_doc, taxonomy)
domains = [r["domain"] for r in corpus.labels]
y = np.array([r["label"] for r in corpus.labels])
crawls = crawl_many(domains, RecordedFetcher(corpus.bundles), rules, CrawlPolicy(), sleep=lambda s: None)
schema = build_schema([c.detections for c in crawls], taxonomy, min_support=20)
X = vectorize_many([c.detections for c in crawls], schema)
model = fit(X, y, TrainParams(max_rounds=150), schema_hash=schema.schema_hash)

site = int(np.argmax(model.predict_proba(X)))
attr = tree_shap(model, vectorize(crawls[site].detections, schema))
print(f"{domains[site]}: margin {model.margin(X[site:site + 1])[0]:.4f} = base {attr.base_value:.4f} + contributions {attr.per_feature.sum():.4f}")
top = sorted(group_contributions(attr, schema), key=lambda g: -abs(g.value))[:8]
for g in top:
    print(f"  {g.level:10s} {g.group_key:32s} {g.value:+.3f}")

phi, _ = tree_shap_matrix(model, X)
groups = [(k, idx) for k, level, idx in group_index(schema) if level == "meta"]
G = np.column_stack([phi[:, idx].sum(axis=1) for _, idx in groups])
print("\nmeta-category importance (mean |contribution| over all sites):")
for name, value, rank in global_importance(G, [k for k, _ in groups]):
    print(f"  {rank}. {name:36s} {value:.3f}")
