"""Synthetic corpus to cross-validated risk scores, cross-source ROC curves and calibration."""

import sys
from pathlib import Path

from siterisk.crawler import CrawlPolicy, RecordedFetcher, crawl_many
from siterisk.dataset import DomainMapping, IncidentRecord, assemble_dataset, filter_negatives
from siterisk.evaluation import ProtocolSpec, calibration, protocol_eval, write_report
from siterisk.features import build_schema
from siterisk.fingerprint import load_ruleset
from siterisk.gbdt import TrainParams
from siterisk.plots import plot_calibration, plot_roc
from siterisk.synthetic import generate_corpus
from siterisk.taxonomy import default_taxonomy

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_report")
corpus = generate_corpus(400, 400, seed=1)
taxonomy = default_taxonomy()
rules = load_ruleset(corpus.ruleset_doc, taxonomy)
labels = {r["domain"]: r for r in corpus.labels}
crawls = {c.domain: c for c in crawl_many(list(labels), RecordedFetcher(corpus.bundles), rules, CrawlPolicy(), sleep=lambda s: None)}

usable_neg = set(filter_negatives([crawls[d] for d, r in labels.items() if r["label"] == 0]))
positives = [
    (DomainMapping(IncidentRecord(d, r["source"], r["reference_date"]), d, d, 1.0, False), crawls[d])
    for d, r in labels.items() if r["label"] == 1 and crawls[d].success
]
negatives = [(d, crawls[d], r["reference_date"]) for d, r in labels.items() if d in usable_neg]
schema = build_schema([c.detections for c in crawls.values()], taxonomy, min_support=20)
data = assemble_dataset(positives, negatives, schema)
print(f"{len(data)} sites, {schema.n_binary} of {schema.n_candidates} candidate tokens kept")

params = TrainParams(max_rounds=300, early_stopping_rounds=30)
report = protocol_eval(data, params, ProtocolSpec.cross_dataset("vcdb", "ransomware", k=5))
for name, auc in report.summary().items():
    print(f"  {name:36s} AUC {auc:.3f}")

within = report.curves["vcdb+ransomware->vcdb+ransomware"]
table = calibration(within.scores, within.labels, 40)
print(f"max calibration gap over bins with >= 20 sites: {table.max_deviation(20):.3f}")
write_report(report, out)
plot_roc({n: c.roc for n, c in report.curves.items()}, out / "roc.svg")
plot_calibration(table, out / "calibration.svg", min_count=20)
print(f"report written to {out}/")
