"""Seeded synthetic websites with planted technology-usage differences.

Used by the end-to-end tests and the demos: builds a fingerprint ruleset over
the shipped taxonomy, then renders small multi-page sites whose technology
mix depends on the site's label.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone

import numpy as np

from .fingerprint import PageBundle
from .sectors import SECTOR_CODES
from .taxonomy import Taxonomy, default_taxonomy

STAMP = datetime(2024, 1, 15, tzinfo=timezone.utc)
VERSIONS = ("1.2.3", "1.4.0", "2.0.1", "3.6.0", "3.7.2")
# categories the generator draws from, spread over all meta-categories
CATEGORY_POOL = (59, 12, 66, 22, 1, 87, 27, 10, 54, 42, 78, 36, 6, 41, 32, 52, 74, 31, 62, 64, 67, 16, 69, 75, 19, 89)


@dataclass(frozen=True)
class SyntheticTech:
    name: str
    category_ids: tuple[int, ...]
    kind: str  # header | html | script | cookie | meta
    versioned: bool
    implies: tuple[str, ...] = ()


@dataclass
class SyntheticCorpus:
    techs: list[SyntheticTech]
    ruleset_doc: dict
    bundles: list[PageBundle]
    labels: list[dict]  # domain,label,source,reference_date,sector
    site_techs: dict[str, list[tuple[str, str | None]]]


def _slug(name: str) -> str:
    return name.lower()


def make_techs(n_tech: int, rng: np.random.Generator) -> list[SyntheticTech]:
    kinds = ("header", "html", "script", "cookie", "meta")
    techs = []
    for i in range(n_tech):
        k = int(rng.integers(1, 3)) if rng.random() < 0.2 else 1
        cats = tuple(sorted({int(c) for c in rng.choice(CATEGORY_POOL, size=k, replace=False)}))
        techs.append(SyntheticTech(f"Synth{i:03d}", cats, kinds[i % len(kinds)], bool(rng.random() < 0.5)))
    # a few implies links, including one cycle
    if n_tech >= 6:
        techs[0] = SyntheticTech(techs[0].name, techs[0].category_ids, techs[0].kind, techs[0].versioned, (techs[1].name,))
        techs[2] = SyntheticTech(techs[2].name, techs[2].category_ids, techs[2].kind, techs[2].versioned, (techs[3].name,))
        techs[3] = SyntheticTech(techs[3].name, techs[3].category_ids, techs[3].kind, techs[3].versioned, (techs[2].name,))
    return techs


def ruleset_doc(techs: list[SyntheticTech]) -> dict:
    doc = {}
    for t in techs:
        s = _slug(t.name)
        entry: dict = {"cats": list(t.category_ids), "website": f"https://{s}.example.org"}
        ver = "\\;version:\\1" if t.versioned else ""
        if t.kind == "header":
            entry["headers"] = {f"X-{t.name}": f"{s}(?:/([\\d.]+))?{ver}"}
        elif t.kind == "html":
            entry["html"] = [f"<!-- {s}(?: v([\\d.]+))? -->{ver}"]
        elif t.kind == "script":
            entry["scriptSrc"] = f"/{s}(?:-([\\d.]+))?(?:\\.min)?\\.js{ver}"
        elif t.kind == "cookie":
            entry["cookies"] = {f"{s}_sid": ""}
        else:
            entry["meta"] = {"generator": f"^{s}(?: ([\\d.]+))?{ver}"}
        if t.implies:
            entry["implies"] = list(t.implies)
        doc[t.name] = entry
    return doc


def _render_page(url: str, techs: list[tuple[SyntheticTech, str | None]], links: list[tuple[str, str]], title: str):
    headers = [("content-type", "text/html; charset=utf-8"), ("server", "synthetic")]
    cookies = []
    head = [f"<title>{title}</title>"]
    body = []
    resources = []
    for t, v in techs:
        s = _slug(t.name)
        if t.kind == "header":
            headers.append((f"X-{t.name}", f"{s}/{v}" if v else s))
        elif t.kind == "html":
            body.append(f"<!-- {s} v{v} -->" if v else f"<!-- {s} -->")
        elif t.kind == "script":
            src = f"https://cdn.example.net/{s}-{v}.min.js" if v else f"https://cdn.example.net/{s}.js"
            resources.append(src)
            head.append(f'<script src="{src}"></script>')
        elif t.kind == "cookie":
            cookies.append((f"{s}_sid", "1"))
        else:
            head.append(f'<meta name="generator" content="{s} {v}">' if v else f'<meta name="generator" content="{s}">')
    body += [f'<a href="{href}">{text}</a>' for href, text in links]
    html = "<html><head>" + "".join(head) + "</head><body>" + "\n".join(body) + "</body></html>"
    return PageBundle(url, 200, tuple(headers), tuple(cookies), html, tuple(resources), STAMP)


def generate_corpus(
    n_pos: int = 1000,
    n_neg: int = 1000,
    *,
    n_tech: int = 60,
    signal: float = 2.0,
    signal_fraction: float = 0.4,
    seed: int = 0,
    privacy_rate: float = 1.0,
    sources: tuple[str, ...] = ("vcdb", "ransomware"),
    sector_signal: float = 0.0,
) -> SyntheticCorpus:
    """Render ``n_pos + n_neg`` sites; signal techs shift usage odds by ``exp(signal)`` for positives."""
    rng = np.random.default_rng(seed)
    techs = make_techs(n_tech, rng)
    p_neg = rng.uniform(0.05, 0.45, size=n_tech)
    shift = np.where(rng.random(n_tech) < signal_fraction, rng.choice([-1.0, 1.0], size=n_tech) * signal, 0.0)
    logit = np.log(p_neg / (1 - p_neg)) + shift
    p_pos = 1 / (1 + np.exp(-logit))
    sector_pos = rng.dirichlet(np.ones(len(SECTOR_CODES)) * (1.0 if sector_signal else 50.0))
    sector_neg = rng.dirichlet(np.ones(len(SECTOR_CODES))) if sector_signal else sector_pos

    n = n_pos + n_neg
    labels_arr = np.r_[np.ones(n_pos, dtype=int), np.zeros(n_neg, dtype=int)]
    rng.shuffle(labels_arr)
    bundles: list[PageBundle] = []
    labels: list[dict] = []
    site_techs: dict[str, list] = {}
    for i in range(n):
        y = int(labels_arr[i])
        domain = f"site{i:05d}.com"
        probs = p_pos if y else p_neg
        used = [t for t, p in zip(techs, probs) if rng.random() < p]
        if not used:
            used = [techs[int(rng.integers(n_tech))]]
        chosen = []
        for t in used:
            v = str(rng.choice(VERSIONS)) if t.versioned and rng.random() < 0.7 else None
            chosen.append((t, v))
        site_techs[domain] = [(t.name, v) for t, v in chosen]

        origin = f"https://{domain}"
        n_sub = int(rng.integers(2, 7))
        subpaths = [f"/page-{j}" for j in range(n_sub)]
        has_privacy = rng.random() < privacy_rate
        # techs land on the homepage or on one random subpage
        placement = {p: [] for p in ["/"] + subpaths}
        for tv in chosen:
            where = "/" if rng.random() < 0.6 else subpaths[int(rng.integers(n_sub))]
            placement[where].append(tv)
        links = [(p, f"Section {p[-1]}") for p in subpaths] + [("https://elsewhere.example.org/", "Partner")]
        if has_privacy:
            links.append(("/privacy-policy", "Privacy Policy"))
        bundles.append(_render_page(origin + "/", placement["/"], links, f"Company {i:05d}"))
        for p in subpaths:
            bundles.append(_render_page(origin + p, placement[p], [("/", "Home")], f"Company {i:05d}"))
        if has_privacy:
            bundles.append(_render_page(origin + "/privacy-policy", [], [("/", "Home")], "Privacy"))

        if y:
            source = sources[int(rng.integers(len(sources)))]
            ref = date(2022, 1, 1) + timedelta(days=int(rng.integers(0, 730)))
        else:
            source = "negative"
            ref = date(2022, 1, 1) + timedelta(days=int(rng.integers(0, 730)))
        sector = SECTOR_CODES[int(rng.choice(len(SECTOR_CODES), p=sector_pos if y else sector_neg))]
        labels.append({"domain": domain, "label": y, "source": source, "reference_date": ref, "sector": sector})
    return SyntheticCorpus(techs, ruleset_doc(techs), bundles, labels, site_techs)


def synthetic_taxonomy() -> Taxonomy:
    return default_taxonomy()


def synthetic_matrix(
    n_per_class: int,
    n_features: int = 20,
    *,
    signal_features: tuple[int, ...] = (0, 1, 2, 3),
    signal: float = 1.5,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Binary feature matrix where ``signal_features`` are more frequent among positives."""
    rng = np.random.default_rng(seed)
    y = np.r_[np.ones(n_per_class, dtype=int), np.zeros(n_per_class, dtype=int)]
    base = rng.uniform(0.1, 0.5, size=n_features)
    logit = np.log(base / (1 - base))
    X = np.empty((len(y), n_features))
    for j in range(n_features):
        lp = logit[j] + (signal if j in signal_features else 0.0)
        p_pos, p_neg = 1 / (1 + np.exp(-lp)), base[j]
        X[:, j] = rng.random(len(y)) < np.where(y == 1, p_pos, p_neg)
    return X, y


def make_site(
    domain: str = "bigsite.com",
    n_pages: int = 50,
    *,
    links_per_page: int = 10,
    n_privacy_pages: int = 12,
    seed: int = 0,
    www_only: bool = True,
) -> list[PageBundle]:
    """A densely linked site with many privacy pages and off-site links.

    With ``www_only`` the bare-domain homepage is absent, so a crawl has to
    fall through to the ``www.`` variant.
    """
    rng = np.random.default_rng(seed)
    host = f"www.{domain}" if www_only else domain
    origin = f"https://{host}"
    paths = ["/"] + [f"/p{i:02d}" for i in range(1, n_pages - n_privacy_pages)]
    privacy_paths = ["/privacy-policy"] + [f"/legal/privacy-{i}" for i in range(1, n_privacy_pages)]
    tech = SyntheticTech("Synth000", (1,), "html", False)
    bundles = []
    for path in paths + privacy_paths:
        targets = rng.choice(len(paths), size=min(links_per_page, len(paths)), replace=False)
        links = [(paths[int(t)], f"Page {int(t)}") for t in targets]
        links += [(p, "Privacy notice") for p in privacy_paths[1:]]
        links += [("https://other-site.org/x", "elsewhere"), ("mailto:info@" + domain, "mail"), ("#top", "top")]
        bundles.append(_render_page(origin + path, [(tech, None)], links, f"{domain} {path}"))
    return bundles
