"""Two-digit NAICS business sectors as a one-hot feature block."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from importlib import resources
from typing import Sequence

import numpy as np

from .features import FeatureSchema, SchemaError

SECTOR_GROUP = "Sector"


@dataclass(frozen=True)
class SectorCode:
    code: str
    label: str


def load_sector_table() -> tuple[SectorCode, ...]:
    text = resources.files("siterisk.data").joinpath("naics_sectors.csv").read_text()
    return tuple(SectorCode(r["code"], r["label"]) for r in csv.DictReader(io.StringIO(text)))


SECTORS = load_sector_table()
SECTOR_CODES: tuple[str, ...] = tuple(s.code for s in SECTORS)


def normalize_sector(value: str | None) -> str | None:
    """Map ``"61"``, ``"61 Educational Services"`` or a code inside a range (``"32"``) to a table code."""
    if value is None:
        return None
    text = str(value).strip()
    if not text:
        return None
    head = text.split()[0].strip("()")
    for code in SECTOR_CODES:
        if head == code:
            return code
        if "-" in code:
            lo, hi = code.split("-")
            if head.isdigit() and int(lo) <= int(head) <= int(hi):
                return code
    for s in SECTORS:
        if text.casefold() == s.label.casefold():
            return s.code
    raise ValueError(f"unknown NAICS sector: {value!r}")


def encode_sector(sector: str | None, codes: Sequence[str] = SECTOR_CODES) -> np.ndarray:
    out = np.zeros(len(codes))
    code = normalize_sector(sector)
    if code is not None:
        out[list(codes).index(code)] = 1
    return out


def extend_schema(schema: FeatureSchema) -> FeatureSchema:
    """Append the 20 sector slots after the technology features."""
    if schema.sector_codes:
        raise SchemaError("schema already carries sector slots")
    return replace(schema, sector_codes=SECTOR_CODES)


def sector_only_schema() -> FeatureSchema:
    """A schema made of the sector block alone, for sector-only baselines."""
    return FeatureSchema((), (), 0, 0, SECTOR_CODES)
