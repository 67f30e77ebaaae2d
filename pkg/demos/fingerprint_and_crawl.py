"""Fingerprint a page, then crawl a whole synthetic site under the default budgets."""

from siterisk.crawler import CrawlPolicy, RecordedFetcher, crawl_site
from siterisk.fingerprint import PageBundle, detect, load_ruleset
from siterisk.synthetic import make_site
from siterisk.taxonomy import default_taxonomy

taxonomy = default_taxonomy()
rules = load_ruleset(
    {
        "nginx": {"cats": [22], "headers": {"Server": r"nginx(?:/([\d.]+))?\;version:\1"}},
        "jQuery": {"cats": [59], "scriptSrc": r"jquery[.-]([\d.]+)(?:\.min)?\.js\;version:\1"},
        "Synth000": {"cats": [1], "html": "<!-- synth000"},
    },
    taxonomy,
)

page = PageBundle(
    "https://example.com/",
    200,
    headers=[("Server", "nginx/1.22.1")],
    resource_urls=["https://cdn.example.com/jquery-3.6.0.min.js"],
)
for d in detect(page, rules):
    print(f"{d.technology:8s} version={d.version} categories={d.category_ids} via {d.sources[0][1]}")

# The bare domain is missing from this site, so the crawl falls back to www.
site = make_site("bigsite.com", n_pages=50)
result = crawl_site("bigsite.com", RecordedFetcher(site), rules, CrawlPolicy(rng_seed=1), sleep=lambda s: None)
print(f"\nentry {result.entry_url}: {len(result.pages)} of {len(site)} pages fetched, privacy page reached: {result.has_privacy_page}")
for p in result.pages:
    print("  ", p.url)
