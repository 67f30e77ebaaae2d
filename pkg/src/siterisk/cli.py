"""Command-line pipeline: crawl, build, train, score, evaluate, explain, snapshot-select.

Every subcommand reads and writes plain files, so stages compose through a
working directory. Outputs carry a one-line manifest (tool version, config
digest, seed); nothing time-dependent goes into it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from datetime import date
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import tomli

from . import __version__
from .attribution import group_index, global_importance, tree_shap_matrix
from .crawler import (
    CrawlPolicy,
    CrawlResult,
    HttpFetcher,
    RecordedFetcher,
    RecordingFetcher,
    crawl_many,
    crawl_site,
    write_archive,
)
from .dataset import (
    DomainMapping,
    HeuristicNameExtractor,
    HttpCdxClient,
    IncidentRecord,
    MappingError,
    StubCdxClient,
    StubSearchClient,
    GoogleSearchClient,
    WaybackFetcher,
    assemble_dataset,
    filter_negatives,
    map_incident_to_domain,
    negative_reference_date,
    read_dataset,
    read_incidents,
    read_labels,
    read_ranked_domains,
    sample_negatives,
    select_snapshot,
    write_dataset,
    write_review_file,
    DATE_FLOOR,
)
from .evaluation import (
    CurveSpec,
    ProtocolSpec,
    calibration,
    protocol_eval,
    write_calibration_csv,
    write_report,
)
from .features import build_schema, load_schema, read_vector_matrix, save_schema, vectorize
from .fingerprint import detections_from_json, detections_to_json, load_ruleset_file
from .gbdt import SchemaMismatch, TrainParams, kfold_cv, load_model, save_model
from .sectors import extend_schema, sector_only_schema
from .taxonomy import Taxonomy, default_taxonomy

logger = logging.getLogger("siterisk")


class CliError(RuntimeError):
    pass


# -- configuration ----------------------------------------------------------


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}")
    with open(p, "rb") as fh:
        return tomli.load(fh)


def _section(cfg: dict, name: str) -> dict:
    return dict(cfg.get(name, {}))


def _pick(args: argparse.Namespace, attr: str, cfg: dict, section: str, key: str | None = None, default=None):
    """CLI value first, then config, then default."""
    v = getattr(args, attr, None)
    if v is not None:
        return v
    return cfg.get(section, {}).get(key or attr, default)


def _require_path(p: str | None, what: str) -> Path:
    if not p:
        raise CliError(f"missing {what}")
    path = Path(p)
    if not path.exists():
        raise CliError(f"{what} not found: {path}")
    return path


def crawl_policy(cfg: dict, seed: int) -> CrawlPolicy:
    known = {f.name for f in fields(CrawlPolicy)}
    opts = {k: v for k, v in _section(cfg, "crawl").items() if k in known}
    opts["rng_seed"] = seed
    return CrawlPolicy(**opts)


def train_params(cfg: dict, seed: int) -> TrainParams:
    known = {f.name for f in fields(TrainParams)}
    opts = {k: v for k, v in _section(cfg, "train").items() if k in known}
    opts.setdefault("rng_seed", seed)
    return TrainParams(**opts)


def manifest(args: argparse.Namespace, cfg: dict, **extra) -> dict:
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]
    return {"tool": f"siterisk {__version__}", "command": args.command, "config_digest": digest, "seed": args.seed, **extra}


def _header(m: dict) -> list[str]:
    return [json.dumps(m, sort_keys=True)]


def _csv_rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _write_csv(path: Path, header: Sequence[str], rows, m: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if m is not None:
            fh.write(f"# {json.dumps(m, sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _taxonomy(cfg: dict) -> Taxonomy:
    paths = _section(cfg, "paths")
    if paths.get("categories"):
        return Taxonomy.from_files(paths["categories"], paths.get("meta_categories"))
    return default_taxonomy()


def read_domain_list(path: Path) -> list[str]:
    """Plain one-per-line list, or any CSV with a ``domain`` column."""
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")]
    if lines and "," in lines[0] and "domain" in lines[0].split(","):
        domains = [r["domain"] for r in csv.DictReader(lines)]
    else:
        domains = lines
    seen, out = set(), []
    for d in domains:
        d = d.strip().lower()
        if d and d not in seen:
            seen.add(d)
            out.append(d)
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


# -- crawl ------------------------------------------------------------------


def _fetcher(args, cfg):
    corpus = _pick(args, "corpus", cfg, "paths")
    if args.offline or corpus:
        return RecordedFetcher(_require_path(corpus, "recorded corpus (--corpus)"))
    timeout = float(_section(cfg, "crawl").get("fetch_timeout", 20.0))
    return HttpFetcher(timeout=timeout)


def _cdx(args, cfg):
    stub = _pick(args, "cdx_stub", cfg, "stubs")
    if stub:
        doc = json.loads(_require_path(stub, "snapshot index stub").read_text())
        return StubCdxClient({k: [list(map(str, r)) for r in v] for k, v in doc.items()})
    if args.offline:
        raise CliError("--offline needs --cdx-stub for snapshot lookups")
    url = _section(cfg, "endpoints").get("cdx_url")
    return HttpCdxClient(url) if url else HttpCdxClient()


def cmd_crawl(args, cfg) -> int:
    domains_path = _require_path(_pick(args, "domains", cfg, "paths"), "domains file")
    domains = read_domain_list(domains_path)
    if not domains:
        raise CliError(f"no domains in {domains_path}")
    out = Path(_pick(args, "out", cfg, "paths", default="crawl"))
    (out / "archives").mkdir(parents=True, exist_ok=True)
    taxonomy = _taxonomy(cfg)
    ruleset = load_ruleset_file(_require_path(_pick(args, "ruleset", cfg, "paths"), "ruleset"), taxonomy)
    policy = crawl_policy(cfg, args.seed)
    base = _fetcher(args, cfg)
    fetcher = RecordingFetcher(base) if args.record else base
    sleep = (lambda s: None) if isinstance(base, RecordedFetcher) else None

    if args.wayback:
        labels = {r["domain"]: r for r in read_labels(_require_path(args.wayback, "labels file for --wayback"))}
        cdx = _cdx(args, cfg)
        results = []
        for d in domains:
            ref = labels.get(d, {}).get("reference_date")
            if ref is None:
                raise CliError(f"no reference_date for {d} in {args.wayback}")
            wb = WaybackFetcher(cdx, ref, fetcher)
            results.append(crawl_site(d, wb, ruleset, policy, sleep=sleep or _polite_sleep))
    else:
        workers = int(_section(cfg, "crawl").get("workers", 8))
        results = crawl_many(domains, fetcher, ruleset, policy, max_workers=workers, sleep=sleep or _polite_sleep)

    m = manifest(args, cfg, n_domains=len(domains))
    for r in results:
        write_archive(out / "archives" / f"{r.domain}.jsonl", r.pages)
    with open(out / "detections.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"manifest": m}, sort_keys=True) + "\n")
        for r in results:
            fh.write(json.dumps({"domain": r.domain, "detections": detections_to_json(r.detections)}, sort_keys=True) + "\n")
    header = ["domain", "success", "has_privacy_page", "entry_url", "n_pages", "n_technologies"]
    _write_csv(out / "manifest.csv", header, ([r.to_manifest_row()[h] for h in header] for r in results), m)
    if args.record:
        write_archive(out / "recorded.jsonl", fetcher.recorded)

    ok = sum(r.success for r in results)
    print(f"crawled {ok}/{len(results)} sites successfully; {sum(r.has_privacy_page for r in results)} reached a privacy page")
    return 0 if ok else 1


def _polite_sleep(seconds: float) -> None:
    time.sleep(seconds)


def read_crawl_dir(path: Path) -> dict[str, CrawlResult]:
    """Rebuild per-domain crawl summaries (without page bodies) from a crawl directory."""
    rows = {r["domain"]: r for r in _csv_rows(_require_path(str(path / "manifest.csv"), "crawl manifest"))}
    dets = {}
    with open(path / "detections.jsonl", encoding="utf-8") as fh:
        for line in fh:
            doc = json.loads(line)
            if "domain" in doc:
                dets[doc["domain"]] = detections_from_json(doc["detections"])
    out = {}
    for d, r in rows.items():
        out[d] = _Summary(d, dets.get(d, ()), r["success"] == "1", r["has_privacy_page"] == "1")
    return out


class _Summary:
    """Just the fields later stages read from a CrawlResult."""

    def __init__(self, domain, detections, success, has_privacy_page):
        self.domain = domain
        self.detections = detections
        self.success = success
        self.has_privacy_page = has_privacy_page


# -- labels (incident mapping + negatives) ----------------------------------


def cmd_labels(args, cfg) -> int:
    out = Path(_pick(args, "out", cfg, "paths", default="labels"))
    out.mkdir(parents=True, exist_ok=True)
    m = manifest(args, cfg)
    rows: list[list[Any]] = []
    sectors = {}
    if args.sectors:
        sectors = {r["domain"]: r["sector"] for r in _csv_rows(_require_path(args.sectors, "sector map"))}

    incidents_path = _pick(args, "incidents", cfg, "paths")
    if incidents_path:
        incidents = read_incidents(_require_path(incidents_path, "incident CSV"))
        stub = _pick(args, "search_stub", cfg, "stubs")
        if stub:
            search = StubSearchClient.from_csv(_require_path(stub, "search stub"))
        elif args.offline:
            raise CliError("--offline needs --search-stub")
        else:
            ep = _section(cfg, "endpoints")
            search = GoogleSearchClient(ep.get("search_key", ""), ep.get("search_cx", ""))
        blocklist = tuple(_section(cfg, "labels").get("blocklist", ())) or None
        fetcher = _fetcher(args, cfg)
        mappings, unmapped = [], []
        for inc in incidents:
            try:
                kw = {"blocklist": blocklist} if blocklist else {}
                mappings.append(map_incident_to_domain(inc, search, HeuristicNameExtractor(), fetcher, **kw))
            except MappingError as exc:
                unmapped.append((inc.raw_id, inc.organization_name, str(exc)))
        n_review = write_review_file(out / "review.csv", mappings)
        _write_csv(out / "unmapped.csv", ["raw_id", "organization_name", "reason"], unmapped, m)
        kept = [mp for mp in mappings if not (args.strict_review and mp.needs_review)]
        for mp in kept:
            rows.append([mp.domain, 1, mp.incident.source, mp.incident.incident_date.isoformat(), sectors.get(mp.domain, "")])
        print(f"mapped {len(mappings)}/{len(incidents)} incidents; {n_review} flagged for review"
              + ("; flagged rows excluded" if args.strict_review else ""))

    tranco = _pick(args, "tranco", cfg, "paths")
    if tranco:
        ranked = read_ranked_domains(_require_path(tranco, "ranked domain CSV"))
        n = int(args.n_negatives if args.n_negatives is not None else _section(cfg, "labels").get("n_negatives", 0))
        for i, d in enumerate(sample_negatives(ranked, n, args.seed)):
            ref = negative_reference_date(DATE_FLOOR, args.seed * 1_000_003 + i)
            rows.append([d, 0, "negative", ref.isoformat(), sectors.get(d, "")])

    if not rows:
        raise CliError("nothing to label: pass --incidents and/or --tranco")
    _write_csv(out / "labels.csv", ["domain", "label", "source", "reference_date", "sector"], rows, m)
    return 0


# -- build ------------------------------------------------------------------


def cmd_build(args, cfg) -> int:
    labels = read_labels(_require_path(_pick(args, "labels", cfg, "paths"), "labels file"))
    crawl_dir = _require_path(_pick(args, "crawl", cfg, "paths"), "crawl directory")
    crawls = read_crawl_dir(crawl_dir)
    out = Path(_pick(args, "out", cfg, "paths", default="data"))
    out.mkdir(parents=True, exist_ok=True)
    taxonomy = _taxonomy(cfg)
    min_support = int(_pick(args, "min_support", cfg, "build", default=20))

    by_domain: dict[str, list[dict]] = {}
    for r in labels:
        by_domain.setdefault(r["domain"], []).append(r)
    positives, negatives, skipped = [], [], 0
    ok_neg = set(filter_negatives([crawls[d] for d in by_domain if d in crawls]))
    for d, recs in by_domain.items():
        c = crawls.get(d)
        for r in recs:
            if r["label"] == 1:
                if c is None or not c.success:
                    skipped += 1
                    continue
                inc = IncidentRecord(d, r["source"] or "other", r["reference_date"] or DATE_FLOOR)
                positives.append((DomainMapping(inc, d, d, 1.0, False), c))
            elif d in ok_neg:
                negatives.append((d, c, r["reference_date"]))
            else:
                skipped += 1
    if not positives and not negatives:
        raise CliError("no labeled domain has a successful crawl")

    sector_mode = _pick(args, "sector_mode", cfg, "build", default="none")
    if sector_mode == "only":
        schema = sector_only_schema()
        n_candidates = 0
    else:
        corpus = [c.detections for _, c in positives] + [c.detections for _, c, _ in negatives]
        schema = build_schema(corpus, taxonomy, min_support)
        n_candidates = schema.n_candidates
        if sector_mode == "combined":
            schema = extend_schema(schema)
    sector_map = {r["domain"]: r["sector"] for r in labels if r["sector"]}
    if sector_mode == "only":
        # sector-only rows carry no technology detections
        from .features import FeatureVector
        from .sectors import encode_sector

        positives = [(mp, FeatureVector(encode_sector(sector_map.get(mp.domain)), schema.schema_hash)) for mp, _ in positives]
        negatives = [(d, FeatureVector(encode_sector(sector_map.get(d)), schema.schema_hash), w) for d, _, w in negatives]
    dataset = assemble_dataset(positives, negatives, schema, sector_map)

    m = manifest(args, cfg, schema_hash=schema.schema_hash, min_support=min_support)
    save_schema(schema, out / "schema.json", m)
    write_dataset(dataset, out / "dataset.csv", out / "vectors.csv", schema, _header(m))
    print(
        f"schema {schema.schema_hash[:12]}: {schema.n_binary} of {n_candidates} candidate binary features retained "
        f"(min_support={min_support}), width {schema.width}; dataset {int(dataset.y.sum())} positive / "
        f"{int((dataset.y == 0).sum())} negative rows, {skipped} labels skipped"
    )
    return 0


def _load_data(data_dir: Path):
    schema = load_schema(_require_path(str(data_dir / "schema.json"), "schema"))
    ds = read_dataset(data_dir / "dataset.csv", data_dir / "vectors.csv", schema)
    return schema, ds


# -- train / score ----------------------------------------------------------


def cmd_train(args, cfg) -> int:
    data_dir = _require_path(_pick(args, "data", cfg, "paths"), "data directory")
    schema, ds = _load_data(data_dir)
    out = Path(_pick(args, "out", cfg, "paths", default="models"))
    out.mkdir(parents=True, exist_ok=True)
    params = train_params(cfg, args.seed)
    k = int(_pick(args, "k", cfg, "cv", default=5))
    cv = kfold_cv(ds, k, params, args.seed)
    m = manifest(args, cfg, schema_hash=schema.schema_hash, k=k, params=asdict(params))
    for i, model in enumerate(cv.fold_models):
        save_model(model, out / f"fold_{i}.json", m)
        (out / f"train_rows_{i}.txt").write_text("".join(f"{d}\n" for d in cv.train_manifests[i]))
    _write_csv(out / "folds.csv", ["domain", "fold"], ((d, f) for d, f in cv.fold_assignments.items()), m)
    _write_csv(
        out / "oof.csv",
        ["domain", "label", "fold", "score"],
        ((d, int(y), cv.fold_assignments[d], _fmt(cv.oof_scores[d])) for d, y in zip(ds.domains, ds.y)),
        m,
    )
    from .evaluation import auc

    oof_auc = auc([cv.oof_scores[d] for d in ds.domains], ds.y)
    print(f"trained {k} fold models; best rounds {[mm.best_round for mm in cv.fold_models]}; OOF AUC {oof_auc:.4f}")
    return 0


def load_fold_models(model_dir: Path):
    paths = sorted(model_dir.glob("fold_*.json"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise CliError(f"no fold models in {model_dir}")
    return [load_model(p) for p in paths]


def _check_hash(models, schema_hash: str) -> None:
    for mdl in models:
        if mdl.schema_hash != schema_hash:
            raise SchemaMismatch(f"schema hash mismatch: model {mdl.schema_hash} vs data {schema_hash}")


def _score_inputs(args, cfg):
    """(domains, X, schema_hash) from a data dir, or detections vectorized with a schema."""
    if args.detections:
        schema = load_schema(_require_path(args.schema, "schema (--schema)"))
        domains, X = [], []
        with open(_require_path(args.detections, "detections file"), encoding="utf-8") as fh:
            for line in fh:
                doc = json.loads(line)
                if "domain" in doc:
                    domains.append(doc["domain"])
                    X.append(vectorize(detections_from_json(doc["detections"]), schema).values)
        return domains, np.array(X).reshape(len(domains), schema.width), schema.schema_hash
    data_dir = _require_path(_pick(args, "data", cfg, "paths"), "data directory")
    schema = load_schema(data_dir / "schema.json")
    domains, names, X = read_vector_matrix(data_dir / "vectors.csv")
    if names != schema.feature_names:
        raise SchemaMismatch("vector columns do not match schema")
    return domains, X, schema.schema_hash


def cmd_score(args, cfg) -> int:
    models = load_fold_models(_require_path(_pick(args, "models", cfg, "paths"), "model directory"))
    domains, X, h = _score_inputs(args, cfg)
    _check_hash(models, h)
    probs = np.mean([mm.predict_proba(X) for mm in models], axis=0) if len(X) else np.zeros(0)
    out = Path(_pick(args, "out", cfg, "paths", default="scores.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ["domain", "score"], ((d, _fmt(p)) for d, p in zip(domains, probs)), manifest(args, cfg, schema_hash=h))
    print(f"scored {len(domains)} domains with the mean of {len(models)} fold models")
    return 0


# -- evaluate ---------------------------------------------------------------


def _protocol(args, cfg, ds) -> ProtocolSpec:
    ev = _section(cfg, "evaluate")
    k = int(_pick(args, "k", cfg, "cv", default=5))
    cutoff = args.holdout_cutoff or ev.get("holdout_cutoff")
    cutoff = date.fromisoformat(str(cutoff)) if cutoff else None
    pos_sources = sorted({s for s, y in zip(ds.sources, ds.y) if y == 1})
    cross = args.cross or ev.get("cross")
    if cross:
        a, b = cross.split(",") if isinstance(cross, str) else cross
        spec = ProtocolSpec.cross_dataset(a, b, k=k, rng_seed=args.seed, holdout_cutoff=cutoff)
    else:
        spec = ProtocolSpec(
            (CurveSpec("all->all", tuple(pos_sources), tuple(pos_sources)),), k=k, rng_seed=args.seed, holdout_cutoff=cutoff
        )
    return spec


def cmd_evaluate(args, cfg) -> int:
    from .plots import plot_calibration, plot_roc, plot_score_histogram

    data_dir = _require_path(_pick(args, "data", cfg, "paths"), "data directory")
    schema, ds = _load_data(data_dir)
    out = Path(_pick(args, "out", cfg, "paths", default="report"))
    out.mkdir(parents=True, exist_ok=True)
    params = train_params(cfg, args.seed)
    spec = _protocol(args, cfg, ds)
    report = protocol_eval(ds, params, spec)
    m = manifest(args, cfg, schema_hash=schema.schema_hash, k=spec.k)
    write_report(report, out, m)

    first = next(iter(report.curves.values()))
    table = calibration(first.scores, first.labels, int(_section(cfg, "evaluate").get("calibration_bins", 40)))
    write_calibration_csv(out / "calibration.csv", table, _header(m))
    plot_roc({n: c.roc for n, c in report.curves.items()}, out / "roc.svg")
    plot_calibration(table, out / "calibration.svg")
    plot_score_histogram(first.scores, first.labels, out / "scores.svg")
    for name, c in report.curves.items():
        print(f"{name}: AUC {c.auc:.4f} ({int(c.labels.sum())} pos / {int((c.labels == 0).sum())} neg)")
    return 0


# -- explain ----------------------------------------------------------------


def cmd_explain(args, cfg) -> int:
    models = load_fold_models(_require_path(_pick(args, "models", cfg, "paths"), "model directory"))
    data_dir = _require_path(_pick(args, "data", cfg, "paths"), "data directory")
    schema, ds = _load_data(data_dir)
    _check_hash(models, schema.schema_hash)
    rows = np.arange(len(ds))
    if args.domain:
        pos = {d: i for i, d in enumerate(ds.domains)}
        missing = [d for d in args.domain if d not in pos]
        if missing:
            raise CliError(f"domains not in dataset: {missing}")
        rows = np.array([pos[d] for d in args.domain])
    X = ds.X[rows]
    domains = [ds.domains[i] for i in rows]

    # the explained model is the fold average in margin space
    phi = np.zeros((len(X), schema.width))
    base = 0.0
    for mdl in models:
        p, b = tree_shap_matrix(mdl, X)
        phi += p[:, : schema.width]
        base += b
    phi /= len(models)
    base /= len(models)
    margin = np.mean([mdl.margin(X) for mdl in models], axis=0)

    groups = group_index(schema)
    G = np.column_stack([phi[:, idx].sum(axis=1) for _, _, idx in groups]) if groups else np.zeros((len(X), 0))
    out = Path(_pick(args, "out", cfg, "paths", default="explain"))
    out.mkdir(parents=True, exist_ok=True)
    m = manifest(args, cfg, schema_hash=schema.schema_hash, margin_space="log-odds")
    _write_csv(
        out / "contributions.csv",
        ["domain", "group_key", "level", "value"],
        ((d, key, level, _fmt(G[r, j])) for r, d in enumerate(domains) for j, (key, level, _) in enumerate(groups)),
        m,
    )
    _write_csv(
        out / "feature_contributions.csv",
        ["domain", "feature", "value"],
        ((d, name, _fmt(phi[r, j])) for r, d in enumerate(domains) for j, name in enumerate(schema.feature_names) if phi[r, j] != 0),
        m,
    )
    _write_csv(
        out / "base.csv",
        ["domain", "base_value", "margin", "sum_features"],
        ((d, _fmt(base), _fmt(margin[r]), _fmt(phi[r].sum())) for r, d in enumerate(domains)),
        m,
    )
    levels = {key: level for key, level, _ in groups}
    imp_rows = []
    for level in ("meta", "category", "technology", "sector"):
        cols = [j for j, (_, lv, _) in enumerate(groups) if lv == level]
        if not cols:
            continue
        for name, mean_abs, rank in global_importance(G[:, cols], [groups[j][0] for j in cols]):
            imp_rows.append((name, levels[name], _fmt(mean_abs), rank))
    _write_csv(out / "global_importance.csv", ["group_key", "level", "mean_abs", "rank"], imp_rows, m)
    residual = float(np.max(np.abs(base + phi.sum(axis=1) - margin))) if len(X) else 0.0
    print(f"explained {len(X)} samples over {len(groups)} groups; max |base + sum - margin| = {residual:.2e}")
    return 0


# -- snapshot-select --------------------------------------------------------


def cmd_snapshot_select(args, cfg) -> int:
    cdx = _cdx(args, cfg)
    if args.input:
        queries = [(r["url"], date.fromisoformat(r["date"])) for r in _csv_rows(_require_path(args.input, "query CSV"))]
    elif args.url and args.date:
        queries = [(args.url, date.fromisoformat(args.date))]
    else:
        raise CliError("pass --url and --date, or --input")
    rows = []
    for url, when in queries:
        snap = select_snapshot(url, when, cdx)
        rows.append((url, when.isoformat(), snap.stamp if snap else "", snap.archive_url if snap else ""))
    if args.out:
        _write_csv(Path(args.out), ["url", "query_date", "timestamp", "archive_url"], rows, manifest(args, cfg))
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["url", "query_date", "timestamp", "archive_url"])
        w.writerows(rows)
    return 0


# -- synthetic corpus -------------------------------------------------------


def cmd_synth(args, cfg) -> int:
    from .synthetic import generate_corpus

    out = Path(args.out)
    (out / "corpus").mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(args.n_pos, args.n_neg, seed=args.seed, signal=args.signal)
    by_site: dict[str, list] = {}
    for b in corpus.bundles:
        by_site.setdefault(b.url.split("/")[2], []).append(b)
    for site, bundles in by_site.items():
        write_archive(out / "corpus" / f"{site}.jsonl", bundles)
    (out / "ruleset.json").write_text(json.dumps(corpus.ruleset_doc, indent=2, sort_keys=True) + "\n")
    labels = corpus.labels
    if args.permute:
        perm = np.random.default_rng(args.seed + 1).permutation([r["label"] for r in labels])
        labels = [{**r, "label": int(p), "source": r["source"] if p else "negative"} for r, p in zip(labels, perm)]
        for r in labels:
            if r["label"] and r["source"] == "negative":
                r["source"] = "vcdb"
    _write_csv(
        out / "labels.csv",
        ["domain", "label", "source", "reference_date", "sector"],
        ((r["domain"], r["label"], r["source"], r["reference_date"].isoformat(), r["sector"]) for r in labels),
    )
    (out / "domains.txt").write_text("".join(f"{r['domain']}\n" for r in labels))
    print(f"wrote {len(labels)} synthetic sites ({sum(r['label'] for r in labels)} positive) to {out}")
    return 0


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="siterisk", description="Website-technology cyber-risk pipeline")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--seed", type=int, default=None, help="seed for sampling, crawling and training (default 0)")
    p.add_argument("--offline", action="store_true", help="never touch the network; use recorded corpora and stubs")
    p.add_argument("--strict-review", action="store_true", help="drop incident mappings flagged for review")
    p.add_argument("--record", action="store_true", help="also save every fetched page bundle for later replay")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("crawl", help="crawl domains and fingerprint their technologies")
    c.add_argument("--domains")
    c.add_argument("--ruleset")
    c.add_argument("--corpus", help="recorded page-bundle archive file or directory")
    c.add_argument("--out")
    c.add_argument("--wayback", metavar="LABELS", help="crawl archived copies dated before each domain's reference_date")
    c.add_argument("--cdx-stub", help="JSON {url: [cdx rows]} used instead of the live snapshot index")

    lb = sub.add_parser("labels", help="map incidents to domains and sample negatives")
    lb.add_argument("--incidents")
    lb.add_argument("--search-stub", help="CSV organization_name,url used instead of a live search API")
    lb.add_argument("--corpus")
    lb.add_argument("--tranco")
    lb.add_argument("--n-negatives", type=int)
    lb.add_argument("--sectors", help="CSV domain,sector")
    lb.add_argument("--out")

    b = sub.add_parser("build", help="build the feature schema and labeled dataset")
    b.add_argument("--labels")
    b.add_argument("--crawl")
    b.add_argument("--out")
    b.add_argument("--min-support", type=int)
    b.add_argument("--sector-mode", choices=("none", "combined", "only"))

    t = sub.add_parser("train", help="k-fold training")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--k", type=int)

    s = sub.add_parser("score", help="score domains with the averaged fold models")
    s.add_argument("--models")
    s.add_argument("--data")
    s.add_argument("--detections", help="detections.jsonl from a crawl, vectorized with --schema")
    s.add_argument("--schema")
    s.add_argument("--out")

    e = sub.add_parser("evaluate", help="ROC/AUC protocol, calibration and plots")
    e.add_argument("--data")
    e.add_argument("--out")
    e.add_argument("--k", type=int)
    e.add_argument("--cross", help="two source tags, e.g. vcdb,ransomware")
    e.add_argument("--holdout-cutoff", help="ISO date; later positives form a held-out curve")

    x = sub.add_parser("explain", help="Shapley contributions per sample and per group")
    x.add_argument("--models")
    x.add_argument("--data")
    x.add_argument("--out")
    x.add_argument("--domain", action="append")

    ss = sub.add_parser("snapshot-select", help="latest archived capture strictly before a date")
    ss.add_argument("--url")
    ss.add_argument("--date")
    ss.add_argument("--input", help="CSV url,date")
    ss.add_argument("--cdx-stub")
    ss.add_argument("--out")

    sy = sub.add_parser("synth", help="write a seeded synthetic corpus, ruleset and labels")
    sy.add_argument("--out", required=True)
    sy.add_argument("--n-pos", type=int, default=1000)
    sy.add_argument("--n-neg", type=int, default=1000)
    sy.add_argument("--signal", type=float, default=2.0)
    sy.add_argument("--permute", action="store_true", help="shuffle labels to destroy the signal")
    return p


COMMANDS = {
    "crawl": cmd_crawl,
    "labels": cmd_labels,
    "build": cmd_build,
    "train": cmd_train,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "snapshot-select": cmd_snapshot_select,
    "synth": cmd_synth,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = int(cfg.get("seed", 0))
        args.offline = args.offline or bool(cfg.get("offline", False))
        return COMMANDS[args.command](args, cfg)
    except (CliError, SchemaMismatch, ValueError, OSError) as exc:
        print(f"siterisk {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
