"""Feature tables: CSV and JSON lines with a fixed column order."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable

from .features import COLUMNS, FeatureRecord

SIGNIFICANT_DIGITS = 9


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.{SIGNIFICANT_DIGITS}g}"
    return str(value)


def _json_value(value: Any) -> Any:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    return value


def write_features_csv(path, records: Iterable[FeatureRecord]) -> Path:
    """One header row, then one row per cell; flags as 0/1, missing values empty."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for rec in records:
            row = rec.as_row()
            w.writerow([format_value(row[c]) for c in COLUMNS])
    return path


def write_features_jsonl(path, records: Iterable[FeatureRecord]) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            row = rec.as_row()
            fh.write(json.dumps({c: _json_value(row[c]) for c in COLUMNS}) + "\n")
    return path


def read_features_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
