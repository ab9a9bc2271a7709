"""Food-composition database: loading, validation, indexing.

All densities are per 100 g of food. The loader keeps row order, rejects
rows that break the density invariants, and reports what it dropped.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

from .errors import MissingColumn

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ["id", "description", "kcal", "protein_g", "carb_g", "fat_g", "source"]
SOURCES = ("FoundationFoods", "SRLegacy", "FNDDS", "Other")

_SOURCE_ALIASES = {
    "foundationfoods": "FoundationFoods",
    "foundation foods": "FoundationFoods",
    "foundation_foods": "FoundationFoods",
    "srlegacy": "SRLegacy",
    "sr legacy": "SRLegacy",
    "sr_legacy": "SRLegacy",
    "fndds": "FNDDS",
}

# Water/fiber accounting quirks push some real rows past 100 g of macros;
# they are flagged, not dropped (only calories are filtered downstream).
MACRO_SUM_FLAG = 105.0


@dataclass(frozen=True)
class FoodItem:
    id: str
    description: str
    kcal: float
    protein_g: float
    carb_g: float
    fat_g: float
    source: str = "Other"


@dataclass
class FoodDatabase:
    items: list[FoodItem] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def by_id(self) -> dict[str, FoodItem]:
        return {item.id: item for item in self.items}


@dataclass
class LoadReport:
    rows_read: int = 0
    loaded: int = 0
    rejected_numeric: int = 0
    rejected_invalid: int = 0
    duplicate_ids: int = 0
    flagged_macro_sum: int = 0


def validate_density_bounds(item: FoodItem) -> tuple[bool, list[str]]:
    """Check FoodItem density invariants; returns (is_valid, violations)."""
    violations = []
    if not item.description.strip():
        violations.append("description non-empty")
    if item.kcal < 0:
        violations.append("kcal >= 0")
    for name in ("protein_g", "carb_g", "fat_g"):
        value = getattr(item, name)
        if value < 0:
            violations.append(f"{name} >= 0")
        elif value > 100:
            violations.append(f"{name} <= 100")
    return (not violations), violations


def normalize_source(raw: str) -> str:
    key = raw.strip().lower()
    return _SOURCE_ALIASES.get(key, "Other")


def load_food_db(path, format: str = "csv") -> tuple[FoodDatabase, LoadReport]:
    """Load a food database CSV; malformed rows are skipped and counted."""
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    report = LoadReport()
    items: list[FoodItem] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"{path}: header lacks {missing}")
        for row in reader:
            report.rows_read += 1
            try:
                item = FoodItem(
                    id=(row["id"] or "").strip(),
                    description=(row["description"] or "").strip(),
                    kcal=float(row["kcal"]),
                    protein_g=float(row["protein_g"]),
                    carb_g=float(row["carb_g"]),
                    fat_g=float(row["fat_g"]),
                    source=normalize_source(row["source"] or ""),
                )
            except (TypeError, ValueError):
                report.rejected_numeric += 1
                continue
            ok, violations = validate_density_bounds(item)
            if not ok or not item.id:
                report.rejected_invalid += 1
                log.warning("row %d rejected: %s", report.rows_read, violations or ["empty id"])
                continue
            if item.id in seen:
                report.duplicate_ids += 1
                log.warning("duplicate food id %r at row %d dropped", item.id, report.rows_read)
                continue
            if item.protein_g + item.carb_g + item.fat_g > MACRO_SUM_FLAG:
                report.flagged_macro_sum += 1
            seen.add(item.id)
            items.append(item)
    report.loaded = len(items)
    return FoodDatabase(items=items), report


def export_food_db(db: FoodDatabase, path) -> None:
    """Write the database back out; reloading reproduces identical values."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REQUIRED_COLUMNS)
        for item in db:
            writer.writerow(
                [
                    item.id,
                    item.description,
                    repr(item.kcal),
                    repr(item.protein_g),
                    repr(item.carb_g),
                    repr(item.fat_g),
                    item.source,
                ]
            )
