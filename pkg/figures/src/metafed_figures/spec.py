"""Figure specifications and versioned CSV schema validation.

The renderer only displays values from the simulator's CSV tables; it never
recomputes energy or round counts. Each table carries its schema tag in a
``schema`` column; required columns are validated before any drawing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path


class SchemaError(ValueError):
    """The input CSV does not match the expected versioned schema."""


KINDS = ("bars-energy", "bars-rounds", "tradeoff-lines")

REQUIRED_COLUMNS = {
    "tradeoff-lines": ("schema", "t0", "setting", "maml_kj", "fl_sum_kj",
                       "total_kj", "is_argmin"),
    "bars-energy": ("schema", "entry", "energy_with_meta_kj", "energy_no_meta_kj"),
    "bars-rounds": ("schema", "entry", "rounds_with_meta", "rounds_no_meta"),
}

SCHEMA_TAGS = {
    "tradeoff-lines": "tradeoff-",
    "bars-energy": "bars-",
    "bars-rounds": "bars-",
}


@dataclass(frozen=True)
class FigureSpec:
    """What to draw: input table(s), figure kind, output path, selectors."""

    csv_path: Path
    kind: str
    out_path: Path
    title: str = ""
    settings: tuple[str, ...] = ()   # tradeoff series filter; empty = all

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")


def spec_from_dict(doc: dict) -> FigureSpec:
    try:
        return FigureSpec(
            csv_path=Path(doc["csv"]),
            kind=str(doc["kind"]),
            out_path=Path(doc["out"]),
            title=str(doc.get("title", "")),
            settings=tuple(doc.get("settings", ())),
        )
    except KeyError as exc:
        raise SchemaError(f"figure spec: missing key {exc}") from exc


def load_spec(path: str | Path) -> FigureSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def read_table(path: Path, kind: str) -> list[dict[str, str]]:
    """Read and validate a CSV against the kind's required columns."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            columns = reader.fieldnames
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    if not columns or not rows:
        raise SchemaError(f"{path}: empty table")
    for column in REQUIRED_COLUMNS[kind]:
        if column not in columns:
            raise SchemaError(f"{path}: missing required column {column!r}")
    tag = SCHEMA_TAGS[kind]
    for row in rows:
        if not row["schema"].startswith(tag):
            raise SchemaError(
                f"{path}: schema {row['schema']!r} is not a {tag}* table")
    return rows
