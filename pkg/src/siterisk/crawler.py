"""Site crawling: homepage variants, random and privacy-targeted navigation.

Fetchers are plain objects with a ``fetch(url) -> PageBundle`` method that
raise :class:`FetchError` on transport failure. Three ship here or in
:mod:`siterisk.dataset`: live HTTP, a recorded page-bundle corpus, and the
Wayback replay fetcher.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol, Sequence
from urllib.parse import urldefrag, urljoin, urlparse

import tldextract
from bs4 import BeautifulSoup

from .fingerprint import DetectionSet, PageBundle, Ruleset, detect, merge_detections

logger = logging.getLogger(__name__)

_LABEL = r"(?!-)[a-z0-9-]{1,63}(?<!-)"
_DOMAIN_RE = re.compile(rf"^(?:{_LABEL}\.)+[a-z][a-z0-9-]{{0,62}}$", re.IGNORECASE)

# offline suffix list snapshot bundled with tldextract
_extract = tldextract.TLDExtract(suffix_list_urls=(), cache_dir=None)


class FetchError(RuntimeError):
    pass


class Fetcher(Protocol):
    def fetch(self, url: str) -> PageBundle: ...


@dataclass(frozen=True)
class CrawlPolicy:
    max_random_links: int = 9
    max_links_per_page: int = 3
    max_privacy_links: int = 9
    privacy_fallback_paths: tuple[str, ...] = ("/privacy-policy", "/privacy")
    per_request_delay: float = 1.0
    fetch_timeout: float = 20.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("max_random_links", "max_links_per_page", "max_privacy_links"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.per_request_delay <= 0 or self.fetch_timeout <= 0:
            raise ValueError("per_request_delay and fetch_timeout must be positive")
        object.__setattr__(self, "privacy_fallback_paths", tuple(self.privacy_fallback_paths))


@dataclass
class CrawlState:
    site_domains: set[str]
    rng: random.Random
    queued: set[str] = field(default_factory=set)
    random_taken: int = 0
    privacy_taken: int = 0
    privacy_urls: set[str] = field(default_factory=set)


@dataclass(frozen=True)
class CrawlResult:
    domain: str
    pages: tuple[PageBundle, ...]
    detections: DetectionSet
    success: bool
    has_privacy_page: bool
    entry_url: str | None
    started_at: datetime
    finished_at: datetime
    failures: tuple[tuple[str, str], ...] = ()

    def to_manifest_row(self) -> dict:
        return {
            "domain": self.domain,
            "success": int(self.success),
            "has_privacy_page": int(self.has_privacy_page),
            "entry_url": self.entry_url or "",
            "n_pages": len(self.pages),
            "n_technologies": len(self.detections),
        }


def registrable_domain(host_or_url: str) -> str:
    host = urlparse(host_or_url).hostname if "://" in host_or_url else host_or_url
    ext = _extract(host or "")
    return ext.top_domain_under_public_suffix or (host or "").lower()


def build_url_variants(domain: str) -> list[str]:
    """Homepage URLs to try, HTTPS before HTTP and bare before ``www.``."""
    domain = domain.strip().lower().rstrip(".")
    if not _DOMAIN_RE.match(domain):
        raise ValueError(f"not a domain name: {domain!r}")
    if domain.startswith("www."):
        return [f"https://{domain}", f"http://{domain}"]
    return [f"https://{domain}", f"https://www.{domain}", f"http://{domain}", f"http://www.{domain}"]


def _normalize(url: str) -> str:
    url, _ = urldefrag(url)
    parts = urlparse(url)
    if not parts.path:
        url = parts._replace(path="/").geturl()
    return url


def _anchors(page: PageBundle) -> list[tuple[str, str]]:
    try:
        soup = BeautifulSoup(page.body, "html.parser")
    except Exception:  # noqa: BLE001 - malformed markup yields no links
        return []
    out = []
    for a in soup.find_all("a", href=True):
        out.append((a["href"], a.get_text(" ", strip=True)))
    return out


def select_links(page: PageBundle, state: CrawlState, policy: CrawlPolicy) -> list[str]:
    """Pick follow-on URLs from ``page``: privacy links first, then random ones.

    Privacy links (``privacy`` in the URL or anchor text) have their own
    site-wide budget. Random picks take at most ``max_links_per_page`` from
    this page and never exceed the site-wide ``max_random_links``.
    Mutates ``state`` to record what was queued.
    """
    if not page.body:
        return []
    privacy: list[str] = []
    others: list[str] = []
    seen = set()
    for href, text in _anchors(page):
        url = _normalize(urljoin(page.url, href.strip()))
        if urlparse(url).scheme not in ("http", "https"):
            continue
        if url in seen or url in state.queued:
            continue
        if registrable_domain(url) not in state.site_domains:
            continue
        seen.add(url)
        if "privacy" in url.lower() or "privacy" in text.lower():
            privacy.append(url)
        else:
            others.append(url)

    picked = privacy[: max(0, policy.max_privacy_links - state.privacy_taken)]
    state.privacy_taken += len(picked)
    state.privacy_urls.update(picked)

    quota = min(policy.max_links_per_page, policy.max_random_links - state.random_taken)
    if quota > 0 and others:
        chosen = state.rng.sample(others, min(quota, len(others)))
        state.random_taken += len(chosen)
        picked = picked + chosen
    state.queued.update(picked)
    return picked


def site_seed(seed: int, domain: str) -> int:
    digest = hashlib.sha256(f"{seed}:{domain}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def crawl_site(
    domain: str,
    fetcher: Fetcher,
    ruleset: Ruleset,
    policy: CrawlPolicy,
    *,
    sleep: Callable[[float], None] = time.sleep,
) -> CrawlResult:
    started = datetime.now(timezone.utc)
    failures: list[tuple[str, str]] = []
    fetched: set[str] = set()
    n_requests = 0

    def get(url: str) -> PageBundle | None:
        nonlocal n_requests
        if n_requests:
            sleep(policy.per_request_delay)
        n_requests += 1
        fetched.add(url)
        try:
            return fetcher.fetch(url)
        except FetchError as exc:
            failures.append((url, str(exc)))
            return None

    entry: PageBundle | None = None
    entry_url = None
    for variant in build_url_variants(domain):
        page = get(_normalize(variant))
        if page is None:
            continue
        if page.status < 400:
            entry, entry_url = page, variant
            break
        failures.append((variant, f"status {page.status}"))

    if entry is None:
        now = datetime.now(timezone.utc)
        return CrawlResult(domain, (), (), False, False, None, started, now, tuple(failures))

    state = CrawlState(
        site_domains={registrable_domain(domain), registrable_domain(entry.url)},
        rng=random.Random(site_seed(policy.rng_seed, domain)),
    )
    state.queued.update({_normalize(entry.url), _normalize(entry_url)})
    pages = [entry]
    queue = deque(select_links(entry, state, policy))
    origin = "{0.scheme}://{0.netloc}".format(urlparse(entry.url))
    for path in policy.privacy_fallback_paths:
        url = _normalize(origin + path)
        state.privacy_urls.add(url)
        if url not in state.queued:
            state.queued.add(url)
            queue.append(url)

    has_privacy = False
    while queue:
        url = queue.popleft()
        if url in fetched:
            continue
        page = get(url)
        if page is None:
            continue
        pages.append(page)
        if page.status < 400:
            has_privacy = has_privacy or url in state.privacy_urls
            queue.extend(select_links(page, state, policy))

    detections = merge_detections([detect(p, ruleset) for p in pages])
    success = any(p.status < 400 for p in pages) and bool(detections)
    return CrawlResult(
        domain,
        tuple(pages),
        detections,
        success,
        has_privacy,
        entry_url,
        started,
        datetime.now(timezone.utc),
        tuple(failures),
    )


def crawl_many(
    domains: Sequence[str],
    fetcher: Fetcher,
    ruleset: Ruleset,
    policy: CrawlPolicy,
    *,
    max_workers: int = 8,
    sleep: Callable[[float], None] = time.sleep,
) -> list[CrawlResult]:
    """Crawl distinct sites concurrently; each site's fetches stay sequential."""
    if max_workers <= 1:
        return [crawl_site(d, fetcher, ruleset, policy, sleep=sleep) for d in domains]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda d: crawl_site(d, fetcher, ruleset, policy, sleep=sleep), domains))


# -- page-bundle archives ---------------------------------------------------


def bundle_to_line(bundle: PageBundle) -> str:
    return json.dumps(bundle.to_dict(), ensure_ascii=True)


def write_archive(path: str | Path, bundles: Iterable[PageBundle]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for b in bundles:
            fh.write(bundle_to_line(b) + "\n")


def read_archive(path: str | Path) -> Iterator[PageBundle]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield PageBundle.from_dict(json.loads(line))


class RecordedFetcher:
    """Serve pages from page-bundle archives (a file or a directory of ``*.jsonl``).

    URLs missing from the corpus raise FetchError, like an unreachable host.
    """

    def __init__(self, source: str | Path | Iterable[PageBundle]):
        self.pages: dict[str, PageBundle] = {}
        if isinstance(source, (str, Path)):
            path = Path(source)
            files = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
            bundles = (b for f in files for b in read_archive(f))
        else:
            bundles = source
        for b in bundles:
            self.pages.setdefault(_normalize(b.url), b)

    def fetch(self, url: str) -> PageBundle:
        try:
            return self.pages[_normalize(url)]
        except KeyError:
            raise FetchError(f"not in recorded corpus: {url}") from None


class RecordingFetcher:
    """Wrap a fetcher and keep every bundle it returns, for writing archives."""

    def __init__(self, inner: Fetcher):
        self.inner = inner
        self.recorded: list[PageBundle] = []

    def fetch(self, url: str) -> PageBundle:
        page = self.inner.fetch(url)
        self.recorded.append(page)
        return page


def _resource_urls(base: str, body: str) -> tuple[str, ...]:
    soup = BeautifulSoup(body, "html.parser")
    out = []
    for tag, attr in (("script", "src"), ("link", "href"), ("iframe", "src")):
        for el in soup.find_all(tag):
            if el.get(attr):
                out.append(urljoin(base, el[attr]))
    return tuple(out)


class HttpFetcher:
    """Live static fetcher built on requests; no script execution."""

    def __init__(self, timeout: float = 20.0, user_agent: str = "siterisk-crawler/0.1", session=None):
        import requests

        self._requests = requests
        self.session = session or requests.Session()
        self.session.headers["User-Agent"] = user_agent
        self.timeout = timeout

    def fetch(self, url: str) -> PageBundle:
        try:
            resp = self.session.get(url, timeout=self.timeout, allow_redirects=True)
        except self._requests.RequestException as exc:
            raise FetchError(f"{type(exc).__name__}: {exc}") from exc
        ctype = resp.headers.get("content-type", "")
        body = resp.text if ("html" in ctype or not ctype) else ""
        return PageBundle(
            url=resp.url,
            status=resp.status_code,
            headers=tuple(resp.raw.headers.items()) if resp.raw is not None else tuple(resp.headers.items()),
            cookies=tuple((c.name, c.value or "") for c in resp.cookies),
            body=body,
            resource_urls=_resource_urls(resp.url, body) if body else (),
            fetched_at=datetime.now(timezone.utc),
        )
