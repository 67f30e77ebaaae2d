"""Technology categories and the meta-categories they roll up into."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

META_CATEGORIES: tuple[str, ...] = (
    "Software Stack",
    "Web Analytics/Pixel Trackers",
    "Miscellaneous",
    "Financial Elements",
    "Customer Support",
    "Internet Hosting",
    "Security/Privacy",
    "Communication Systems",
)

# categories missing from the meta map land here
FALLBACK_META = "Miscellaneous"


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    meta: str


@dataclass(frozen=True)
class Taxonomy:
    categories: Mapping[int, Category]
    meta_categories: tuple[str, ...] = META_CATEGORIES

    def __post_init__(self):
        if tuple(self.meta_categories) != META_CATEGORIES:
            raise TaxonomyError("meta-categories must be the 8 standard groups in order")
        for cat in self.categories.values():
            if cat.meta not in self.meta_categories:
                raise TaxonomyError(f"category {cat.id} ({cat.name}) has unknown meta-category {cat.meta!r}")

    def __contains__(self, category_id: int) -> bool:
        return category_id in self.categories

    def meta_of(self, category_id: int) -> str:
        return self.categories[category_id].meta

    def members(self, meta: str) -> list[int]:
        """Category ids belonging to ``meta``, ascending."""
        return sorted(c.id for c in self.categories.values() if c.meta == meta)

    def category_doc(self) -> dict:
        return {str(cid): {"name": self.categories[cid].name} for cid in sorted(self.categories)}

    @classmethod
    def from_docs(cls, category_doc: Mapping, meta_doc: Mapping[str, list[str]] | None = None) -> "Taxonomy":
        """Build from a category file (id -> {name}) and a meta map (meta -> category names)."""
        if meta_doc is None:
            meta_doc = _load_resource("meta_categories.json")
        by_name = {}
        for meta, names in meta_doc.items():
            for name in names:
                by_name[name] = meta
        cats = {}
        for key, entry in category_doc.items():
            try:
                cid = int(key)
                name = entry["name"]
            except (ValueError, TypeError, KeyError) as exc:
                raise TaxonomyError(f"bad category entry {key!r}: {entry!r}") from exc
            cats[cid] = Category(cid, name, by_name.get(name, FALLBACK_META))
        return cls(dict(sorted(cats.items())))

    @classmethod
    def from_files(cls, categories_path: str | Path, meta_path: str | Path | None = None) -> "Taxonomy":
        category_doc = json.loads(Path(categories_path).read_text())
        meta_doc = json.loads(Path(meta_path).read_text()) if meta_path else None
        return cls.from_docs(category_doc, meta_doc)


def _load_resource(name: str):
    return json.loads(resources.files("siterisk.data").joinpath(name).read_text())


def default_taxonomy() -> Taxonomy:
    """The shipped category list grouped per the standard 8 meta-categories."""
    return Taxonomy.from_docs(_load_resource("categories.json"), _load_resource("meta_categories.json"))


def dump_categories(taxonomy: Taxonomy, path: str | Path) -> None:
    Path(path).write_text(json.dumps(taxonomy.category_doc(), indent=2) + "\n")
