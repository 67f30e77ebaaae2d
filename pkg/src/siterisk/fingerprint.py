"""Fingerprint rules and technology detection over fetched pages.

Rulesets use the community fingerprint JSON format: a mapping from technology
name to an entry with ``cats``, pattern sources (``headers``, ``cookies``,
``meta``, ``html``, ``scriptSrc``, ``url``) and ``implies``. Version capture is
written as a pattern suffix such as ``\\;version:\\1``.
"""

from __future__ import annotations

import copy
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlparse

from bs4 import BeautifulSoup

from .taxonomy import Taxonomy

logger = logging.getLogger(__name__)

# document key -> evidence kind, in detection order
KEYED_KINDS = {"headers": "header", "cookies": "cookie", "meta": "meta"}
LIST_KINDS = {"html": "html", "scriptSrc": "script-src", "url": "url"}
PATTERN_KEYS = (*KEYED_KINDS, *LIST_KINDS)
# runtime probes need script execution; kept for round-trip, never evaluated
RUNTIME_KEYS = ("js", "dom")

_VERSION_RE = re.compile(r"\d+(?:\.\d+)*")
_TAG_SEP = "\\;"


class RulesetError(ValueError):
    pass


@dataclass(frozen=True)
class PageBundle:
    url: str
    status: int
    headers: tuple[tuple[str, str], ...] = ()
    cookies: tuple[tuple[str, str], ...] = ()
    body: str = ""
    resource_urls: tuple[str, ...] = ()
    fetched_at: datetime = field(default_factory=lambda: datetime(1970, 1, 1, tzinfo=timezone.utc))

    def __post_init__(self):
        if not 100 <= self.status <= 599:
            raise ValueError(f"HTTP status out of range: {self.status}")
        parts = urlparse(self.url)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise ValueError(f"not an absolute URL: {self.url!r}")
        object.__setattr__(self, "headers", tuple((str(k), str(v)) for k, v in self.headers))
        object.__setattr__(self, "cookies", tuple((str(k), str(v)) for k, v in self.cookies))
        object.__setattr__(self, "resource_urls", tuple(self.resource_urls))

    def header(self, name: str) -> list[str]:
        name = name.lower()
        return [v for k, v in self.headers if k.lower() == name]

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "status": self.status,
            "headers": [list(h) for h in self.headers],
            "cookies": [list(c) for c in self.cookies],
            "body": self.body,
            "resource_urls": list(self.resource_urls),
            "fetched_at": self.fetched_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PageBundle":
        stamp = doc.get("fetched_at") or "1970-01-01T00:00:00+00:00"
        fetched_at = datetime.fromisoformat(stamp.replace("Z", "+00:00"))
        cookies = doc.get("cookies") or []
        if isinstance(cookies, Mapping):
            cookies = list(cookies.items())
        return cls(
            url=doc["url"],
            status=int(doc["status"]),
            headers=tuple(tuple(h) for h in doc.get("headers") or []),
            cookies=tuple(tuple(c) for c in cookies),
            body=doc.get("body") or "",
            resource_urls=tuple(doc.get("resource_urls") or []),
            fetched_at=fetched_at,
        )


@dataclass(frozen=True)
class Pattern:
    raw: str
    regex: re.Pattern
    version: str | None = None
    key: str | None = None

    @classmethod
    def parse(cls, raw: str, key: str | None = None, *, rule: str = "?") -> "Pattern":
        if not isinstance(raw, str):
            raise RulesetError(f"rule {rule!r}: pattern must be a string, got {raw!r}")
        head, *tags = raw.split(_TAG_SEP)
        version = None
        for tag in tags:
            name, _, value = tag.partition(":")
            if name == "version":
                version = value
        try:
            regex = re.compile(head, re.IGNORECASE)
        except re.error as exc:
            raise RulesetError(f"rule {rule!r}: pattern {head!r} does not compile: {exc}") from exc
        return cls(raw, regex, version, key)

    def capture_version(self, match: re.Match) -> str | None:
        if self.version is None:
            return None
        return normalize_version(render_version(self.version, match))


@dataclass(frozen=True)
class TechRule:
    name: str
    category_ids: tuple[int, ...]
    patterns: Mapping[str, tuple[Pattern, ...]]
    implies: tuple[str, ...] = ()
    # round-trip bookkeeping: original implies strings, which sources were scalars, untouched keys
    implies_raw: tuple[str, ...] = ()
    scalars: frozenset = frozenset()
    extra: Mapping = field(default_factory=dict)

    def to_doc(self) -> dict:
        doc = copy.deepcopy(dict(self.extra))
        doc["cats"] = list(self.category_ids)
        for key, pats in self.patterns.items():
            if key in KEYED_KINDS:
                grouped: dict[str, list[str]] = {}
                for p in pats:
                    grouped.setdefault(p.key, []).append(p.raw)
                doc[key] = {
                    name: raws[0] if (key, name) in self.scalars else raws for name, raws in grouped.items()
                }
            else:
                raws = [p.raw for p in pats]
                doc[key] = raws[0] if (key, None) in self.scalars else raws
        if self.implies_raw:
            doc["implies"] = self.implies_raw[0] if ("implies", None) in self.scalars else list(self.implies_raw)
        return doc


@dataclass(frozen=True)
class Ruleset:
    rules: Mapping[str, TechRule]

    def __len__(self) -> int:
        return len(self.rules)

    def __contains__(self, name: str) -> bool:
        return name in self.rules

    def __getitem__(self, name: str) -> TechRule:
        return self.rules[name]

    @property
    def uses_meta(self) -> bool:
        return any("meta" in r.patterns for r in self.rules.values())

    def to_doc(self) -> dict:
        return {name: rule.to_doc() for name, rule in self.rules.items()}


@dataclass(frozen=True)
class Detection:
    technology: str
    versions: tuple[str, ...] = ()
    category_ids: tuple[int, ...] = ()
    sources: tuple[tuple[str, str], ...] = ()

    @property
    def version(self) -> str | None:
        return self.versions[0] if self.versions else None

    def to_dict(self) -> dict:
        return {
            "technology": self.technology,
            "versions": list(self.versions),
            "category_ids": list(self.category_ids),
            "sources": [list(s) for s in self.sources],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Detection":
        return cls(
            doc["technology"],
            tuple(doc.get("versions") or ()),
            tuple(doc.get("category_ids") or ()),
            tuple(tuple(s) for s in doc.get("sources") or ()),
        )


DetectionSet = tuple[Detection, ...]


def normalize_version(text: str | None) -> str | None:
    """Strip a leading ``v`` and keep the dotted numeric prefix, else None."""
    if not text:
        return None
    text = text.strip()
    if text[:1] in ("v", "V"):
        text = text[1:]
    m = _VERSION_RE.match(text)
    return m.group(0) if m else None


def render_version(template: str, match: re.Match) -> str:
    """Fill ``\\N`` group references; supports the ``\\N?yes:no`` ternary form."""

    def group(i: int) -> str:
        try:
            return match.group(i) or ""
        except IndexError:
            return ""

    def fill(text: str) -> str:
        return re.sub(r"\\(\d+)", lambda m: group(int(m.group(1))), text)

    tern = re.fullmatch(r"\\(\d+)\?([^:]*):(.*)", template)
    if tern:
        return fill(tern.group(2) if group(int(tern.group(1))) else tern.group(3))
    return fill(template)


def _as_list(value, key: str, rule: str) -> tuple[list, bool]:
    if isinstance(value, str):
        return [value], True
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return value, False
    raise RulesetError(f"rule {rule!r}: {key} must be a string or list of strings")


def _parse_rule(name: str, entry) -> TechRule:
    if not name:
        raise RulesetError("empty technology name")
    if not isinstance(entry, Mapping):
        raise RulesetError(f"rule {name!r}: entry must be an object")
    cats = entry.get("cats", [])
    if not isinstance(cats, list) or not all(isinstance(c, int) and not isinstance(c, bool) for c in cats):
        raise RulesetError(f"rule {name!r}: cats must be an integer array")

    patterns: dict[str, tuple[Pattern, ...]] = {}
    scalars = set()
    extra = {}
    for key, value in entry.items():
        if key == "cats" or key == "implies":
            continue
        if key in KEYED_KINDS:
            if not isinstance(value, Mapping):
                raise RulesetError(f"rule {name!r}: {key} must be an object")
            pats = []
            for sub, raw in value.items():
                raws, scalar = _as_list(raw, f"{key}.{sub}", name)
                if scalar:
                    scalars.add((key, sub))
                pats.extend(Pattern.parse(r, sub, rule=name) for r in raws)
            patterns[key] = tuple(pats)
        elif key in LIST_KINDS:
            raws, scalar = _as_list(value, key, name)
            if scalar:
                scalars.add((key, None))
            patterns[key] = tuple(Pattern.parse(r, rule=name) for r in raws)
        else:
            if key in RUNTIME_KEYS:
                logger.warning("rule %r: %r patterns need script execution and are ignored", name, key)
            extra[key] = copy.deepcopy(value)

    implies_raw: list[str] = []
    if "implies" in entry:
        implies_raw, scalar = _as_list(entry["implies"], "implies", name)
        if scalar:
            scalars.add(("implies", None))
    implies = tuple(r.split(_TAG_SEP)[0] for r in implies_raw)
    return TechRule(name, tuple(cats), patterns, implies, tuple(implies_raw), frozenset(scalars), extra)


def load_ruleset(doc: Mapping, taxonomy: Taxonomy) -> Ruleset:
    """Validate a parsed ruleset document against ``taxonomy``.

    Raises RulesetError naming the offending rule for malformed entries,
    regexes that fail to compile, unknown category ids, and dangling implies.
    """
    if not isinstance(doc, Mapping):
        raise RulesetError("ruleset document must be an object")
    rules = {name: _parse_rule(name, entry) for name, entry in doc.items()}
    for rule in rules.values():
        unknown = [c for c in rule.category_ids if c not in taxonomy]
        if unknown:
            raise RulesetError(f"rule {rule.name!r}: unknown category ids {unknown}")
        dangling = [t for t in rule.implies if t not in rules]
        if dangling:
            raise RulesetError(f"rule {rule.name!r}: implies unknown technologies {dangling}")
    return Ruleset(rules)


def load_ruleset_file(path: str | Path, taxonomy: Taxonomy) -> Ruleset:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise RulesetError(f"{path}: not valid JSON: {exc}") from exc
    return load_ruleset(doc, taxonomy)


def dump_ruleset(ruleset: Ruleset, path: str | Path | None = None) -> dict:
    doc = ruleset.to_doc()
    if path is not None:
        Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")
    return doc


def _meta_tags(body: str) -> list[tuple[str, str]]:
    soup = BeautifulSoup(body, "html.parser")
    out = []
    for tag in soup.find_all("meta"):
        name = tag.get("name") or tag.get("property")
        content = tag.get("content")
        if name and content is not None:
            out.append((name.lower(), content))
    return out


def _sources(bundle: PageBundle, key: str, pattern: Pattern, meta: list[tuple[str, str]]) -> Iterable[str]:
    if key == "headers":
        return bundle.header(pattern.key)
    if key == "cookies":
        want = pattern.key.lower()
        return [v for k, v in bundle.cookies if k.lower() == want]
    if key == "meta":
        want = pattern.key.lower()
        return [v for k, v in meta if k == want]
    if key == "html":
        return [bundle.body] if bundle.body else []
    if key == "scriptSrc":
        return bundle.resource_urls
    return [bundle.url]


def implied_closure(names: Iterable[str], ruleset: Ruleset) -> set[str]:
    """All technologies reachable through ``implies`` (cycle-safe)."""
    seen = set()
    stack = list(names)
    while stack:
        name = stack.pop()
        for target in ruleset[name].implies:
            if target not in seen:
                seen.add(target)
                stack.append(target)
    return seen


def detect(bundle: PageBundle, ruleset: Ruleset) -> DetectionSet:
    """Detect technologies on one page, sorted by name."""
    meta = _meta_tags(bundle.body) if bundle.body and ruleset.uses_meta else []
    found: dict[str, Detection] = {}
    for rule in ruleset.rules.values():
        version = None
        kinds: list[str] = []
        for key, pats in rule.patterns.items():
            kind = KEYED_KINDS.get(key) or LIST_KINDS[key]
            for pattern in pats:
                for text in _sources(bundle, key, pattern, meta):
                    m = pattern.regex.search(text)
                    if m is None:
                        continue
                    if kind not in kinds:
                        kinds.append(kind)
                    if version is None:
                        version = pattern.capture_version(m)
        if kinds:
            found[rule.name] = Detection(
                rule.name,
                (version,) if version else (),
                rule.category_ids,
                tuple((bundle.url, k) for k in kinds),
            )
    for name in sorted(implied_closure(found, ruleset)):
        if name not in found:
            found[name] = Detection(name, (), ruleset[name].category_ids, ((bundle.url, "implied"),))
    return tuple(found[name] for name in sorted(found))


def _version_key(v: str):
    return tuple(int(p) for p in v.split("."))


def merge_detections(per_page: Sequence[DetectionSet]) -> DetectionSet:
    """Union detections across pages, keeping every distinct version."""
    merged: dict[str, Detection] = {}
    for dset in per_page:
        for d in dset:
            prev = merged.get(d.technology)
            if prev is None:
                merged[d.technology] = d
                continue
            versions = tuple(sorted(set(prev.versions) | set(d.versions), key=_version_key))
            merged[d.technology] = Detection(d.technology, versions, prev.category_ids, prev.sources + d.sources)
    return tuple(
        Detection(d.technology, tuple(sorted(set(d.versions), key=_version_key)), d.category_ids, d.sources)
        for d in (merged[n] for n in sorted(merged))
    )


def detections_to_json(detections: DetectionSet) -> list[dict]:
    return [d.to_dict() for d in detections]


def detections_from_json(doc: Sequence[Mapping]) -> DetectionSet:
    return tuple(sorted((Detection.from_dict(d) for d in doc), key=lambda d: d.technology))
