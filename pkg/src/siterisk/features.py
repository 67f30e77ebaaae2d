"""Turn detection sets into fixed-width numeric vectors.

Each technology yields binary tokens for its name and its major and
major.minor versions. Every category and meta-category also gets an integer
feature counting the distinct technologies detected under it. Binary tokens
seen on fewer than ``min_support`` sites are pruned; counts are not.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fingerprint import Detection, DetectionSet
from .taxonomy import Taxonomy

ROOT = "root"


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class BinaryFeature:
    token: str
    technology: str
    category_ids: tuple[int, ...]


@dataclass(frozen=True)
class CountFeature:
    key: str
    kind: str  # "category" | "meta"
    name: str
    category_ids: tuple[int, ...]


def category_key(category_id: int) -> str:
    return f"cat:{category_id}"


def meta_key(meta: str) -> str:
    return f"meta:{meta}"


def sector_key(code: str) -> str:
    return f"sector:{code}"


@dataclass(frozen=True)
class FeatureSchema:
    binary_features: tuple[BinaryFeature, ...]
    count_features: tuple[CountFeature, ...]
    min_support: int
    corpus_size: int
    sector_codes: tuple[str, ...] = ()
    n_candidates: int = 0
    schema_hash: str = field(default="", compare=False)

    def __post_init__(self):
        tokens = [b.token for b in self.binary_features]
        if len(tokens) != len(set(tokens)):
            raise SchemaError("duplicate binary tokens")
        object.__setattr__(self, "schema_hash", self._digest())

    def _digest(self) -> str:
        doc = {
            "binary": [[b.token, b.technology, list(b.category_ids)] for b in self.binary_features],
            "count": [[c.key, list(c.category_ids)] for c in self.count_features],
            "sector": list(self.sector_codes),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    @property
    def n_binary(self) -> int:
        return len(self.binary_features)

    @property
    def width(self) -> int:
        return len(self.binary_features) + len(self.count_features) + len(self.sector_codes)

    @property
    def feature_names(self) -> list[str]:
        return (
            [b.token for b in self.binary_features]
            + [c.key for c in self.count_features]
            + [sector_key(s) for s in self.sector_codes]
        )

    @property
    def sector_slice(self) -> slice:
        start = self.n_binary + len(self.count_features)
        return slice(start, start + len(self.sector_codes))

    def index(self, name: str) -> int:
        return self.feature_names.index(name)

    def to_doc(self) -> dict:
        return {
            "binary_features": [
                {"token": b.token, "technology": b.technology, "category_ids": list(b.category_ids)}
                for b in self.binary_features
            ],
            "count_features": [
                {"key": c.key, "kind": c.kind, "name": c.name, "category_ids": list(c.category_ids)}
                for c in self.count_features
            ],
            "sector_codes": list(self.sector_codes),
            "feature_names": self.feature_names,
            "min_support": self.min_support,
            "corpus_size": self.corpus_size,
            "n_candidates": self.n_candidates,
            "schema_hash": self.schema_hash,
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "FeatureSchema":
        schema = cls(
            tuple(BinaryFeature(b["token"], b["technology"], tuple(b["category_ids"])) for b in doc["binary_features"]),
            tuple(
                CountFeature(c["key"], c["kind"], c["name"], tuple(c["category_ids"])) for c in doc["count_features"]
            ),
            int(doc["min_support"]),
            int(doc["corpus_size"]),
            tuple(doc.get("sector_codes", ())),
            int(doc.get("n_candidates", 0)),
        )
        if doc.get("schema_hash") and doc["schema_hash"] != schema.schema_hash:
            raise SchemaError(f"schema file hash {doc['schema_hash']} does not match contents {schema.schema_hash}")
        return schema


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema_hash: str


def expand_versions(detection: Detection) -> set[str]:
    """Name plus ``name major`` and ``name major.minor`` for every version."""
    name = detection.technology
    tokens = {name}
    for version in detection.versions:
        parts = version.split(".")
        tokens.add(f"{name} {parts[0]}")
        if len(parts) > 1:
            tokens.add(f"{name} {parts[0]}.{parts[1]}")
    return tokens


def build_schema(corpus: Sequence[DetectionSet], taxonomy: Taxonomy, min_support: int = 20) -> FeatureSchema:
    """Collect version tokens over ``corpus`` and keep those seen on >= ``min_support`` sites."""
    if not corpus:
        raise SchemaError("cannot build a schema from an empty corpus")
    support: Counter[str] = Counter()
    owner: dict[str, str] = {}
    cats: dict[str, set[int]] = {}
    for site in corpus:
        site_tokens = set()
        for d in site:
            for tok in expand_versions(d):
                site_tokens.add(tok)
                owner.setdefault(tok, d.technology)
                cats.setdefault(tok, set()).update(d.category_ids)
        support.update(site_tokens)

    kept = [tok for tok, n in support.items() if n >= min_support]
    binaries = sorted(
        (BinaryFeature(tok, owner[tok], tuple(sorted(cats[tok]))) for tok in kept),
        key=lambda b: (min(b.category_ids, default=1 << 30), b.token),
    )
    counts = [
        CountFeature(category_key(cid), "category", taxonomy.categories[cid].name, (cid,))
        for cid in sorted(taxonomy.categories)
    ]
    for meta in taxonomy.meta_categories:
        members = taxonomy.members(meta)
        if members:
            counts.append(CountFeature(meta_key(meta), "meta", meta, tuple(members)))
    return FeatureSchema(tuple(binaries), tuple(counts), min_support, len(corpus), (), len(support))


def count_features(node: str, schema: FeatureSchema) -> int:
    """Number of features attributable to a node of the hierarchy.

    ``node`` is ``"root"``, a category key (``cat:<id>``) or a meta key
    (``meta:<name>``). A node counts itself plus every distinct feature
    below it, so binaries shared by two categories count once higher up.
    """
    if node == ROOT:
        return schema.n_binary + len(schema.count_features)
    by_key = {c.key: c for c in schema.count_features}
    if node not in by_key:
        raise KeyError(f"unknown hierarchy node {node!r}")
    group = by_key[node]
    members = set(group.category_ids)
    n_binary = sum(1 for b in schema.binary_features if members.intersection(b.category_ids))
    if group.kind == "category":
        return n_binary + 1
    n_cats = sum(1 for c in schema.count_features if c.kind == "category" and c.category_ids[0] in members)
    return n_binary + n_cats + 1


def group_members(schema: FeatureSchema, key: str) -> list[int]:
    """Feature indices aggregated under a category or meta-category (itself included)."""
    by_key = {c.key: (i, c) for i, c in enumerate(schema.count_features)}
    pos, group = by_key[key]
    members = set(group.category_ids)
    idx = [i for i, b in enumerate(schema.binary_features) if members.intersection(b.category_ids)]
    if group.kind == "meta":
        idx += [
            schema.n_binary + j
            for j, c in enumerate(schema.count_features)
            if c.kind == "category" and c.category_ids[0] in members
        ]
    idx.append(schema.n_binary + pos)
    return sorted(idx)


def vectorize(detections: DetectionSet, schema: FeatureSchema, sector: str | None = None) -> FeatureVector:
    values = np.zeros(schema.width, dtype=np.float64)
    tokens = set()
    for d in detections:
        tokens |= expand_versions(d)
    for i, b in enumerate(schema.binary_features):
        if b.token in tokens:
            values[i] = 1
    techs_by_cat: dict[int, set[str]] = {}
    for d in detections:
        for cid in d.category_ids:
            techs_by_cat.setdefault(cid, set()).add(d.technology)
    off = schema.n_binary
    for j, c in enumerate(schema.count_features):
        names = set()
        for cid in c.category_ids:
            names |= techs_by_cat.get(cid, set())
        values[off + j] = len(names)
    if schema.sector_codes:
        from .sectors import encode_sector

        values[schema.sector_slice] = encode_sector(sector, schema.sector_codes)
    elif sector is not None:
        raise SchemaError("schema has no sector slots")
    return FeatureVector(values, schema.schema_hash)


def vectorize_many(
    corpus: Sequence[DetectionSet], schema: FeatureSchema, sectors: Sequence[str | None] | None = None
) -> np.ndarray:
    if sectors is None:
        sectors = [None] * len(corpus)
    if not corpus:
        return np.zeros((0, schema.width))
    return np.vstack([vectorize(d, schema, s if schema.sector_codes else None).values for d, s in zip(corpus, sectors)])


def save_schema(schema: FeatureSchema, path: str | Path, manifest: Mapping | None = None) -> None:
    doc = schema.to_doc()
    if manifest:
        doc = {"manifest": dict(manifest), **doc}
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")


def load_schema(path: str | Path) -> FeatureSchema:
    return FeatureSchema.from_doc(json.loads(Path(path).read_text()))


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_vector_matrix(
    path: str | Path, domains: Sequence[str], matrix: np.ndarray, schema: FeatureSchema, header_lines: Iterable[str] = ()
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", *schema.feature_names])
        for dom, row in zip(domains, matrix):
            w.writerow([dom, *(_fmt(v) for v in row)])


def read_vector_matrix(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """Return (domains, feature names, matrix); ``#`` manifest lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    header, body = rows[0], rows[1:]
    domains = [r[0] for r in body]
    matrix = np.array([[float(x) for x in r[1:]] for r in body], dtype=np.float64).reshape(len(body), len(header) - 1)
    return domains, header[1:], matrix
