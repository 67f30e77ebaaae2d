"""Labeled dataset assembly.

Positives come from incident reports whose organization names are mapped to
domains through a search client and checked by name similarity. Negatives
are sampled from a ranked domain list and kept only when the crawl found a
privacy page. Historical replay selects archived snapshots through a
CDX-style index.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence
from urllib.parse import urlparse

import numpy as np
from bs4 import BeautifulSoup

from .crawler import CrawlResult, FetchError, Fetcher, registrable_domain
from .features import FeatureSchema, FeatureVector, read_vector_matrix, vectorize, write_vector_matrix
from .fingerprint import PageBundle
from .sectors import normalize_sector

logger = logging.getLogger(__name__)

SOURCES = ("vcdb", "ransomware", "other")
NEGATIVE_SOURCE = "negative"
DEFAULT_BLOCKLIST = ("wikipedia.org", "linkedin.com", "bloomberg.com", "facebook.com", "instagram.com")
REVIEW_THRESHOLD = 0.9
MIN_MATCH = 3
DATE_FLOOR = date(2022, 1, 1)
DATE_CEILING = date(2023, 12, 31)


class MappingError(LookupError):
    """No usable website could be found for an incident."""


class SnapshotIndexError(RuntimeError):
    """Transport failure talking to the snapshot index; safe to retry."""

    retryable = True


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class IncidentRecord:
    organization_name: str
    source: str
    incident_date: date
    raw_id: str = ""

    def __post_init__(self):
        if not self.organization_name.strip():
            raise ValueError("organization_name is empty")
        if self.source not in SOURCES:
            raise ValueError(f"unknown incident source {self.source!r}; expected one of {SOURCES}")


@dataclass(frozen=True)
class DomainMapping:
    incident: IncidentRecord
    domain: str
    extracted_name: str
    similarity: float
    needs_review: bool
    url: str = ""


def read_incidents(path: str | Path) -> list[IncidentRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            IncidentRecord(
                r["organization_name"], r["source"].strip(), date.fromisoformat(r["incident_date"].strip()), r["raw_id"]
            )
            for r in csv.DictReader(line for line in fh if not line.startswith("#"))
        ]


def read_ranked_domains(path: str | Path) -> list[str]:
    """Read a ``rank,domain`` list (header optional), ordered by rank."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if len(rec) < 2 or not rec[0].strip().isdigit():
                continue
            rows.append((int(rec[0]), rec[1].strip().lower()))
    return [d for _, d in sorted(rows)]


# -- name similarity --------------------------------------------------------


def normalize_name(text: str) -> str:
    return " ".join(text.casefold().split())


def _longest_common(a_segs: list[str], b_segs: list[str]):
    """Longest common substring across segment lists, or None below MIN_MATCH.

    Ties go to the earliest position in ``a`` and then in ``b``.
    """
    best = None  # (-length, ia, sa, ib, sb)
    for ia, a in enumerate(a_segs):
        for ib, b in enumerate(b_segs):
            prev = [0] * (len(b) + 1)
            for i in range(1, len(a) + 1):
                cur = [0] * (len(b) + 1)
                ai = a[i - 1]
                for j in range(1, len(b) + 1):
                    if ai == b[j - 1]:
                        n = prev[j - 1] + 1
                        cur[j] = n
                        if n >= MIN_MATCH:
                            key = (-n, ia, i - n, ib, j - n)
                            if best is None or key < best:
                                best = key
                prev = cur
    if best is None:
        return None
    n, ia, sa, ib, sb = best
    return -n, ia, sa, ib, sb


def _cut(segs: list[str], idx: int, start: int, length: int) -> list[str]:
    s = segs[idx]
    pieces = [p for p in (s[:start], s[start + length :]) if len(p) >= MIN_MATCH]
    return segs[:idx] + pieces + segs[idx + 1 :]


def name_similarity(a: str, b: str) -> float:
    """Greedy longest-common-substring overlap, relative to the shorter name.

    Repeatedly removes the longest shared substring of at least 3 characters
    from both names (the remainders are searched separately) and returns the
    matched length over the shorter normalized name. Symmetric: the pair is
    put in canonical order before matching so tie-breaking is order-free.
    """
    a, b = normalize_name(a), normalize_name(b)
    if not a or not b:
        raise ValueError("names must be non-empty after normalization")
    a, b = sorted((a, b))
    a_segs, b_segs = [a], [b]
    total = 0
    while True:
        hit = _longest_common(a_segs, b_segs)
        if hit is None:
            break
        n, ia, sa, ib, sb = hit
        total += n
        a_segs = _cut(a_segs, ia, sa, n)
        b_segs = _cut(b_segs, ib, sb, n)
    return min(1.0, max(0.0, total / min(len(a), len(b))))


# -- incident to domain mapping ---------------------------------------------


class SearchClient(Protocol):
    def search(self, query: str) -> list[str]: ...


class NameExtractor(Protocol):
    def extract(self, page: PageBundle) -> str: ...


class StubSearchClient:
    """Canned results keyed by query; unknown queries return nothing."""

    def __init__(self, results: Mapping[str, Sequence[str]]):
        self.results = {k: list(v) for k, v in results.items()}

    def search(self, query: str) -> list[str]:
        return list(self.results.get(query, []))

    @classmethod
    def from_csv(cls, path: str | Path) -> "StubSearchClient":
        """``organization_name,url`` rows, several rows per name kept in file order."""
        results: dict[str, list[str]] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                results.setdefault(r["organization_name"], []).append(r["url"])
        return cls(results)


class GoogleSearchClient:
    """Custom Search JSON API adapter; result order is the provider's."""

    endpoint = "https://www.googleapis.com/customsearch/v1"

    def __init__(self, api_key: str, engine_id: str, session=None, timeout: float = 20.0):
        import requests

        self.session = session or requests.Session()
        self.params = {"key": api_key, "cx": engine_id}
        self.timeout = timeout

    def search(self, query: str) -> list[str]:
        resp = self.session.get(self.endpoint, params={**self.params, "q": query}, timeout=self.timeout)
        resp.raise_for_status()
        return [item["link"] for item in resp.json().get("items", [])]


class StubNameExtractor:
    def __init__(self, names: Mapping[str, str] | None = None, default: str | None = None):
        self.names = dict(names or {})
        self.default = default

    def extract(self, page: PageBundle) -> str:
        host = registrable_domain(page.url)
        if host in self.names:
            return self.names[host]
        if self.default is not None:
            return self.default
        return HeuristicNameExtractor().extract(page)


_COPYRIGHT = re.compile(r"(?:©|&copy;|\(c\)|copyright)\s*(?:\d{4}(?:\s*[-–]\s*\d{4})?)?\s*,?\s*([^.|\n<]{2,80})", re.I)


class HeuristicNameExtractor:
    """Organization name from page metadata without any external model.

    Preference: copyright notice, ``og:site_name``, first title segment,
    ``og:title``, then the start of the visible text.
    """

    def extract(self, page: PageBundle) -> str:
        soup = BeautifulSoup(page.body or "", "html.parser")
        text = soup.get_text(" ", strip=True)
        m = _COPYRIGHT.search(text)
        if m:
            name = re.split(r"\s+all rights reserved", m.group(1), flags=re.I)[0].strip(" ,")
            if name:
                return name
        og = {
            (t.get("property") or "").lower(): t.get("content", "")
            for t in soup.find_all("meta")
            if t.get("property")
        }
        if og.get("og:site_name"):
            return og["og:site_name"].strip()
        if soup.title and soup.title.string and soup.title.string.strip():
            return re.split(r"\s[|\-–:]\s", soup.title.string.strip())[0]
        if og.get("og:title"):
            return og["og:title"].strip()
        return text[:60] or registrable_domain(page.url)


def _blocked(url: str, blocklist: Iterable[str]) -> bool:
    dom = registrable_domain(url)
    return any(dom == b or dom.endswith("." + b) for b in blocklist)


def map_incident_to_domain(
    incident: IncidentRecord,
    search: SearchClient,
    name_extractor: NameExtractor,
    fetcher: Fetcher,
    *,
    blocklist: Sequence[str] = DEFAULT_BLOCKLIST,
    review_threshold: float = REVIEW_THRESHOLD,
) -> DomainMapping:
    """Map an incident's organization to the domain of its top non-directory search hit."""
    candidates = [u for u in search.search(incident.organization_name) if not _blocked(u, blocklist)]
    if not candidates:
        raise MappingError(f"no usable search result for {incident.organization_name!r} ({incident.raw_id})")
    url = candidates[0]
    domain = registrable_domain(url)
    try:
        page = fetcher.fetch(url)
        extracted = name_extractor.extract(page)
    except FetchError as exc:
        logger.info("landing page fetch failed for %s: %s", url, exc)
        extracted = ""
    try:
        sim = name_similarity(incident.organization_name, extracted) if extracted.strip() else 0.0
    except ValueError:
        sim = 0.0
    return DomainMapping(incident, domain, extracted, sim, sim < review_threshold, url)


def write_review_file(path: str | Path, mappings: Sequence[DomainMapping]) -> int:
    rows = [m for m in mappings if m.needs_review]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["raw_id", "organization_name", "domain", "extracted_name", "similarity"])
        for m in rows:
            w.writerow([m.incident.raw_id, m.incident.organization_name, m.domain, m.extracted_name, f"{m.similarity:.4f}"])
    return len(rows)


# -- negatives --------------------------------------------------------------


def sample_negatives(ranked_domains: Sequence[str], n: int, rng_seed: int) -> list[str]:
    if n < 0 or n > len(ranked_domains):
        raise ValueError(f"cannot sample {n} domains from a list of {len(ranked_domains)}")
    idx = np.random.default_rng(rng_seed).choice(len(ranked_domains), size=n, replace=False)
    return [ranked_domains[i] for i in idx]


def filter_negatives(crawls: Sequence[CrawlResult]) -> list[str]:
    """Domains whose crawl succeeded and reached a privacy page."""
    return [c.domain for c in crawls if c.success and c.has_privacy_page]


def negative_reference_date(
    earliest_snapshot: date, rng_seed: int, floor: date = DATE_FLOOR, ceiling: date = DATE_CEILING
) -> date:
    """Uniform date between max(earliest_snapshot, floor) and ceiling, inclusive."""
    start = max(earliest_snapshot, floor)
    if start > ceiling:
        raise ValueError(f"window start {start} is after {ceiling}")
    days = (ceiling - start).days
    return date.fromordinal(start.toordinal() + int(np.random.default_rng(rng_seed).integers(0, days + 1)))


# -- snapshot selection -----------------------------------------------------

CDX_FIELDS = ("urlkey", "timestamp", "original", "mimetype", "statuscode", "digest", "length")


@dataclass(frozen=True)
class SnapshotRef:
    original: str
    timestamp: datetime
    statuscode: str = ""
    digest: str = ""
    archive_base: str = "https://web.archive.org/web"

    @property
    def stamp(self) -> str:
        return self.timestamp.strftime("%Y%m%d%H%M%S")

    @property
    def archive_url(self) -> str:
        return f"{self.archive_base}/{self.stamp}id_/{self.original}"


class SnapshotIndex(Protocol):
    def rows(self, url: str) -> list[list[str]]: ...


def parse_cdx_timestamp(stamp: str) -> datetime:
    stamp = (stamp + "00000000000000")[:14]
    return datetime.strptime(stamp, "%Y%m%d%H%M%S").replace(tzinfo=timezone.utc)


class HttpCdxClient:
    """CDX endpoint client returning row arrays (header row dropped)."""

    def __init__(self, endpoint: str = "https://web.archive.org/cdx/search/cdx", session=None, timeout: float = 30.0):
        import requests

        self._requests = requests
        self.endpoint = endpoint
        self.session = session or requests.Session()
        self.timeout = timeout

    def rows(self, url: str) -> list[list[str]]:
        try:
            resp = self.session.get(self.endpoint, params={"url": url, "output": "json"}, timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json() if resp.text.strip() else []
        except (self._requests.RequestException, ValueError) as exc:
            raise SnapshotIndexError(f"snapshot index query failed for {url}: {exc}") from exc
        if data and list(data[0][:2]) == ["urlkey", "timestamp"]:
            data = data[1:]
        return [list(r) for r in data]


class StubCdxClient:
    def __init__(self, rows_by_url: Mapping[str, Sequence[Sequence[str]]], fail: bool = False):
        self.rows_by_url = {k: [list(r) for r in v] for k, v in rows_by_url.items()}
        self.fail = fail

    def rows(self, url: str) -> list[list[str]]:
        if self.fail:
            raise SnapshotIndexError("stub index unavailable")
        return list(self.rows_by_url.get(url, []))


def _url_identity(url: str) -> tuple[str, str]:
    p = urlparse(url if "://" in url else "http://" + url)
    host = (p.hostname or "").lower()
    if host.startswith("www."):
        host = host[4:]
    path = p.path.rstrip("/") or "/"
    return host, path + (("?" + p.query) if p.query else "")


def select_snapshot(url: str, query_date: date, cdx: SnapshotIndex) -> SnapshotRef | None:
    """Latest capture of ``url`` taken strictly before ``query_date``."""
    want = _url_identity(url)
    best = None
    for row in cdx.rows(url):
        rec = dict(zip(CDX_FIELDS, row))
        if _url_identity(rec["original"]) != want:
            continue
        ts = parse_cdx_timestamp(rec["timestamp"])
        if ts.date() >= query_date:
            continue
        if best is None or ts > best.timestamp:
            best = SnapshotRef(rec["original"], ts, rec.get("statuscode", ""), rec.get("digest", ""))
    return best


class WaybackFetcher:
    """Replay a site as archived before ``query_date``.

    Resolves each URL to its snapshot and fetches the raw archived capture
    (``id_`` mode) through ``inner``. Archived ``X-Archive-Orig-*`` headers
    are mapped back to their original names.
    """

    def __init__(self, cdx: SnapshotIndex, query_date: date, inner: Fetcher):
        self.cdx = cdx
        self.query_date = query_date
        self.inner = inner
        self.selected: dict[str, SnapshotRef] = {}

    def fetch(self, url: str) -> PageBundle:
        try:
            snap = select_snapshot(url, self.query_date, self.cdx)
        except SnapshotIndexError as exc:
            raise FetchError(str(exc)) from exc
        if snap is None:
            raise FetchError(f"no snapshot of {url} before {self.query_date}")
        self.selected[url] = snap
        page = self.inner.fetch(snap.archive_url)
        headers = []
        for k, v in page.headers:
            lk = k.lower()
            if lk.startswith("x-archive-orig-"):
                headers.append((k[len("x-archive-orig-") :], v))
            elif not lk.startswith(("x-archive", "memento", "link")):
                headers.append((k, v))
        return PageBundle(url, page.status, tuple(headers), page.cookies, page.body, page.resource_urls, snap.timestamp)


# -- assembled datasets -----------------------------------------------------


@dataclass(frozen=True)
class LabeledSample:
    domain: str
    label: int
    source: str
    reference_date: date | None
    sector: str | None
    vector: FeatureVector


@dataclass
class LabeledDataset:
    domains: list[str]
    X: np.ndarray
    y: np.ndarray
    sources: list[str]
    reference_dates: list[date | None]
    sectors: list[str | None]
    schema_hash: str
    conflicts: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.domains)
        self.X = np.asarray(self.X, dtype=np.float64).reshape(n, -1) if n else np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if not (len(self.y) == len(self.sources) == len(self.reference_dates) == len(self.sectors) == n):
            raise DatasetError("dataset columns have different lengths")
        if len(set(self.domains)) != n:
            raise DatasetError("duplicate domains in dataset")

    def __len__(self) -> int:
        return len(self.domains)

    def __iter__(self):
        for i, d in enumerate(self.domains):
            yield LabeledSample(
                d,
                int(self.y[i]),
                self.sources[i],
                self.reference_dates[i],
                self.sectors[i],
                FeatureVector(self.X[i], self.schema_hash),
            )

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        pick = lambda seq: [seq[i] for i in rows]  # noqa: E731
        return LabeledDataset(
            pick(self.domains),
            self.X[rows],
            self.y[rows],
            pick(self.sources),
            pick(self.reference_dates),
            pick(self.sectors),
            self.schema_hash,
        )

    def with_matrix(self, X: np.ndarray, schema_hash: str) -> "LabeledDataset":
        return LabeledDataset(
            list(self.domains), X, self.y.copy(), list(self.sources), list(self.reference_dates), list(self.sectors), schema_hash
        )

    @property
    def source_tags(self) -> list[str]:
        return sorted(set(self.sources))


def _vector_for(item, schema: FeatureSchema, sector: str | None) -> FeatureVector:
    if isinstance(item, FeatureVector):
        if item.schema_hash != schema.schema_hash:
            raise DatasetError(f"vector schema {item.schema_hash} does not match schema {schema.schema_hash}")
        return item
    if not item.success:
        raise DatasetError(f"crawl of {item.domain} did not succeed")
    return vectorize(item.detections, schema, sector if schema.sector_codes else None)


def assemble_dataset(
    positives: Sequence[tuple[DomainMapping, CrawlResult | FeatureVector]],
    negatives: Sequence[tuple[str, CrawlResult | FeatureVector, date | None]],
    schema: FeatureSchema,
    sectors: Mapping[str, str] | None = None,
) -> LabeledDataset:
    """Pair vectors with labels; one row per domain, positives win conflicts.

    A domain cited by several incidents keeps its earliest incident date and
    that incident's source tag.
    """
    sectors = {k: normalize_sector(v) for k, v in (sectors or {}).items()}
    rows: dict[str, tuple] = {}
    for mapping, item in positives:
        d = mapping.domain
        when = mapping.incident.incident_date
        if d in rows and rows[d][2] <= when:
            continue
        rows[d] = (1, mapping.incident.source, when, item)
    conflicts = []
    for d, item, when in negatives:
        if d in rows:
            logger.warning("domain %s is both a positive and a negative; keeping it as positive", d)
            conflicts.append(d)
            continue
        rows[d] = (0, NEGATIVE_SOURCE, when, item)

    domains = list(rows)
    vectors = [_vector_for(rows[d][3], schema, sectors.get(d)) for d in domains]
    X = np.vstack([v.values for v in vectors]) if vectors else np.zeros((0, schema.width))
    return LabeledDataset(
        domains,
        X,
        np.array([rows[d][0] for d in domains]),
        [rows[d][1] for d in domains],
        [rows[d][2] for d in domains],
        [sectors.get(d) for d in domains],
        schema.schema_hash,
        conflicts,
    )


def write_dataset(
    dataset: LabeledDataset, csv_path: str | Path, matrix_path: str | Path, schema: FeatureSchema, header_lines=()
) -> None:
    if dataset.schema_hash != schema.schema_hash:
        raise DatasetError("dataset and schema hashes differ")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "label", "source", "reference_date", "sector"])
        for s in dataset:
            w.writerow([s.domain, s.label, s.source, s.reference_date.isoformat() if s.reference_date else "", s.sector or ""])
    write_vector_matrix(matrix_path, dataset.domains, dataset.X, schema, header_lines)


def read_labels(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for r in csv.DictReader(line for line in fh if not line.startswith("#")):
            out.append(
                {
                    "domain": r["domain"],
                    "label": int(r["label"]),
                    "source": r.get("source") or "",
                    "reference_date": date.fromisoformat(r["reference_date"]) if r.get("reference_date") else None,
                    "sector": r.get("sector") or None,
                }
            )
        return out


def read_dataset(csv_path: str | Path, matrix_path: str | Path, schema: FeatureSchema) -> LabeledDataset:
    labels = read_labels(csv_path)
    domains, names, matrix = read_vector_matrix(matrix_path)
    if names != schema.feature_names:
        raise DatasetError("vector matrix columns do not match the schema")
    pos = {d: i for i, d in enumerate(domains)}
    rows = [pos[r["domain"]] for r in labels]
    return LabeledDataset(
        [r["domain"] for r in labels],
        matrix[rows] if rows else np.zeros((0, schema.width)),
        np.array([r["label"] for r in labels]),
        [r["source"] for r in labels],
        [r["reference_date"] for r in labels],
        [r["sector"] for r in labels],
        schema.schema_hash,
    )
