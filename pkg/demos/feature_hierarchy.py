"""Turn detections into binary version tokens plus category and meta-category counts."""

from siterisk.features import build_schema, count_features, expand_versions, vectorize
from siterisk.fingerprint import Detection
from siterisk.taxonomy import Category, Taxonomy

taxonomy = Taxonomy({
    1: Category(1, "CMS", "Software Stack"),
    2: Category(2, "JavaScript libraries", "Software Stack"),
    3: Category(3, "Cookie compliance", "Security/Privacy"),
})
site = (
    Detection("WordPress", ("6.4.2",), (1,)),
    Detection("jQuery", ("1.13.2",), (2,)),
    Detection("Lodash", (), (1, 2)),
    Detection("OneTrust", (), (3,)),
    Detection("CookieYes", (), (3,)),
)
print("jQuery 1.13.2 expands to", sorted(expand_versions(site[1])))

# every token appears on 20 sites, exactly the default support threshold
schema = build_schema([site] * 20, taxonomy, min_support=20)
print(f"{schema.n_binary} binary tokens, {len(schema.count_features)} count features, width {schema.width}")
for node in ("root", "cat:1", "meta:Software Stack", "meta:Security/Privacy"):
    print(f"  {node:24s} {count_features(node, schema)} features")

vec = vectorize(site[:2] + (Detection("Drupal", ("10.1",), (1,)),), schema)
for name, value in zip(schema.feature_names, vec.values):
    if value:
        print(f"  {name} = {value:g}")
print("Drupal is below the support threshold and has no binary feature, but still counts towards cat:1")
