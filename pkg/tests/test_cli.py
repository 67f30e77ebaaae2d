import csv
import json
from pathlib import Path

import numpy as np
import pytest

from siterisk.cli import main

GOLDEN = Path(__file__).parent / "golden" / "metrics.json"
TRAIN_CFG = """
seed = 3
[train]
max_rounds = 60
learning_rate = 0.2
early_stopping_rounds = 15
max_leaves = 16
[cv]
k = 3
"""


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def run(*argv):
    assert main([str(a) for a in argv]) == 0, argv


def pipeline(root: Path) -> Path:
    cfg = root / "run.toml"
    cfg.write_text(TRAIN_CFG)
    c = ["--config", cfg]
    run(*c, "synth", "--out", root / "synth", "--n-pos", 60, "--n-neg", 60)
    run(*c, "--offline", "crawl", "--domains", root / "synth/domains.txt", "--ruleset", root / "synth/ruleset.json",
        "--corpus", root / "synth/corpus", "--out", root / "crawl")
    run(*c, "build", "--labels", root / "synth/labels.csv", "--crawl", root / "crawl", "--out", root / "data", "--min-support", 5)
    run(*c, "train", "--data", root / "data", "--out", root / "models")
    run(*c, "score", "--models", root / "models", "--data", root / "data", "--out", root / "scores.csv")
    run(*c, "evaluate", "--data", root / "data", "--out", root / "report", "--cross", "vcdb,ransomware")
    run(*c, "explain", "--models", root / "models", "--data", root / "data", "--out", root / "explain")
    return root


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return pipeline(tmp_path_factory.mktemp("run1"))


def test_pipeline_outputs(workdir):
    manifest = rows(workdir / "crawl/manifest.csv")
    assert len(manifest) == 120 and all(r["success"] == "1" for r in manifest)
    assert {r["domain"] for r in rows(workdir / "data/dataset.csv")} <= {r["domain"] for r in manifest}
    oof = rows(workdir / "models/oof.csv")
    assert {r["fold"] for r in oof} == {"0", "1", "2"}
    for r in oof:
        train_rows = (workdir / f"models/train_rows_{r['fold']}.txt").read_text().split()
        assert r["domain"] not in train_rows
    report = json.loads((workdir / "report/report.json").read_text())
    assert set(report["auc"]) == {"vcdb->vcdb", "ransomware->ransomware", "vcdb+ransomware->vcdb+ransomware", "vcdb->ransomware", "ransomware->vcdb"}
    for f in ("roc.svg", "calibration.svg", "scores.svg", "calibration.csv", "roc_vcdb_to_ransomware.csv"):
        assert (workdir / "report" / f).exists()


def test_manifest_header_is_deterministic(workdir):
    first = (workdir / "models/oof.csv").read_text().splitlines()[0]
    m = json.loads(first[2:])
    assert m["tool"].startswith("siterisk") and m["seed"] == 3 and m["command"] == "train"
    assert not any("time" in k or "date" in k for k in m)


def test_rerun_is_byte_identical(workdir, tmp_path):
    again = pipeline(tmp_path)
    for rel in ("crawl/manifest.csv", "crawl/detections.jsonl", "data/vectors.csv", "data/schema.json", "models/fold_0.json",
                "models/oof.csv", "scores.csv", "report/report.json", "report/roc.svg", "report/calibration.svg",
                "explain/contributions.csv"):
        assert (workdir / rel).read_bytes() == (again / rel).read_bytes(), rel


def test_explanations_sum_to_margin(workdir):
    for r in rows(workdir / "explain/base.csv"):
        assert float(r["base_value"]) + float(r["sum_features"]) == pytest.approx(float(r["margin"]), abs=1e-9)
    imp = rows(workdir / "explain/global_importance.csv")
    assert {r["level"] for r in imp} >= {"meta", "category", "technology"}


def test_score_unseen_domain_from_detections(workdir, tmp_path):
    det = tmp_path / "dets.jsonl"
    det.write_text(json.dumps({"domain": "brand-new.org", "detections": [{"technology": "Synth999", "versions": [], "category_ids": [1], "sources": []}]}) + "\n")
    run("score", "--models", workdir / "models", "--detections", det, "--schema", workdir / "data/schema.json", "--out", tmp_path / "s.csv")
    (r,) = rows(tmp_path / "s.csv")
    assert r["domain"] == "brand-new.org" and 0 < float(r["score"]) < 1


def test_schema_mismatch_names_both_hashes(workdir, tmp_path, capsys):
    data = tmp_path / "data"
    code = main(["build", "--labels", str(workdir / "synth/labels.csv"), "--crawl", str(workdir / "crawl"), "--out", str(data), "--min-support", "40"])
    assert code == 0
    capsys.readouterr()
    assert main(["score", "--models", str(workdir / "models"), "--data", str(data), "--out", str(tmp_path / "s.csv")]) == 2
    err = capsys.readouterr().err
    model_hash = json.loads((workdir / "models/fold_0.json").read_text())["schema_hash"]
    new_hash = json.loads((data / "schema.json").read_text())["schema_hash"]
    assert model_hash in err and new_hash in err


def test_empty_domain_file_is_an_error(tmp_path, workdir, capsys):
    (tmp_path / "d.txt").write_text("\n")
    code = main(["crawl", "--domains", str(tmp_path / "d.txt"), "--ruleset", str(workdir / "synth/ruleset.json"),
                 "--corpus", str(workdir / "synth/corpus"), "--out", str(tmp_path / "c")])
    assert code == 2 and "no domains" in capsys.readouterr().err


def test_missing_input_reports_path(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope")]) == 2
    assert "nope" in capsys.readouterr().err


def test_snapshot_select(tmp_path):
    url = "https://example.com/"
    stub = tmp_path / "cdx.json"
    stub.write_text(json.dumps({url: [["com,example)/", "20230110000000", url, "text/html", "200", "D", "1"],
                                      ["com,example)/", "20230120000000", url, "text/html", "200", "D", "1"]]}))
    (tmp_path / "q.csv").write_text(f"url,date\n{url},2023-01-15\n{url},2023-01-10\n")
    run("--offline", "snapshot-select", "--input", tmp_path / "q.csv", "--cdx-stub", stub, "--out", tmp_path / "o.csv")
    out = rows(tmp_path / "o.csv")
    assert [r["timestamp"] for r in out] == ["20230110000000", ""]
    assert out[0]["archive_url"].startswith("https://web.archive.org/web/20230110000000")


def test_labels_from_stubs(tmp_path):
    (tmp_path / "inc.csv").write_text("raw_id,organization_name,source,incident_date\n1,Company 00001,vcdb,2023-03-01\n2,Nobody Inc,vcdb,2023-03-01\n")
    (tmp_path / "search.csv").write_text("organization_name,url\nCompany 00001,https://site00001.com/\n")
    (tmp_path / "tranco.csv").write_text("".join(f"{i},neg{i}.com\n" for i in range(1, 51)))
    from siterisk.crawler import write_archive
    from siterisk.synthetic import generate_corpus

    corpus = generate_corpus(2, 2, seed=0)
    write_archive(tmp_path / "corpus.jsonl", corpus.bundles)
    run("--offline", "labels", "--incidents", tmp_path / "inc.csv", "--search-stub", tmp_path / "search.csv",
        "--corpus", tmp_path / "corpus.jsonl", "--tranco", tmp_path / "tranco.csv", "--n-negatives", 10, "--out", tmp_path / "lab")
    lab = rows(tmp_path / "lab/labels.csv")
    assert [r["domain"] for r in lab if r["label"] == "1"] == ["site00001.com"]
    negs = [r for r in lab if r["label"] == "0"]
    assert len(negs) == 10 and all("2022-01-01" <= r["reference_date"] <= "2023-12-31" for r in negs)
    assert len(rows(tmp_path / "lab/unmapped.csv")) == 1


def test_golden_metrics(workdir, regen_golden):
    report = json.loads((workdir / "report/report.json").read_text())["auc"]
    oof = rows(workdir / "models/oof.csv")
    current = {"auc": report, "oof_head": {r["domain"]: r["score"] for r in oof[:5]}}
    if regen_golden or not GOLDEN.exists():
        GOLDEN.write_text(json.dumps(current, indent=2, sort_keys=True) + "\n")
        pytest.skip("golden metrics regenerated")
    want = json.loads(GOLDEN.read_text())
    assert want["oof_head"] == current["oof_head"]
    for k, v in want["auc"].items():
        assert current["auc"][k] == pytest.approx(v, abs=1e-12)
