"""Match incident names to websites and pick archived snapshots before a reference date."""

from datetime import date

from siterisk.crawler import RecordedFetcher
from siterisk.dataset import (
    HeuristicNameExtractor,
    IncidentRecord,
    StubCdxClient,
    StubSearchClient,
    map_incident_to_domain,
    name_similarity,
    negative_reference_date,
    select_snapshot,
)
from siterisk.fingerprint import PageBundle

for a, b in [("23andMe Holding Co", "23andMe"), ("ACME Corp", "Acme Corporation"), ("Acme Corp", "Zenith Ltd")]:
    print(f"similarity({a!r}, {b!r}) = {name_similarity(a, b):.3f}")

incident = IncidentRecord("Acme Corp", "vcdb", date(2023, 3, 1))
search = StubSearchClient({"Acme Corp": ["https://en.wikipedia.org/wiki/Acme", "https://www.acme-corp.com/"]})
landing = PageBundle("https://www.acme-corp.com/", 200, body="<title>Acme Corporation | Home</title>")
mapping = map_incident_to_domain(incident, search, HeuristicNameExtractor(), RecordedFetcher([landing]))
print(f"\n{incident.organization_name} -> {mapping.domain} (site calls itself {mapping.extracted_name!r}, "
      f"similarity {mapping.similarity:.2f}, review: {mapping.needs_review})")

url = "https://www.acme-corp.com/"
rows = [["com,acme-corp)/", stamp, url, "text/html", "200", "X", "1"] for stamp in ("20221101090000", "20230301000000", "20230415120000")]
snap = select_snapshot(url, incident.incident_date, StubCdxClient({url: rows}))
print(f"latest capture strictly before {incident.incident_date}: {snap.stamp} -> {snap.archive_url}")

print("\nnegative sites get a reference date inside 2022-01-01 .. 2023-12-31:")
for seed in range(3):
    print(f"  seed {seed}: {negative_reference_date(date(2019, 6, 1), seed)}")
