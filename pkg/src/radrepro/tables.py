"""CSV schemas for feature tables, reproducibility results and outcomes.

Floats are written with ``repr`` so a read/write round trip is exact and
reruns give byte-identical files; missing values are empty cells.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .repro_stats import ReproResult, VarianceComponents
from .survival.cindex import SurvivalRecord

__all__ = [
    "FEATURE_COLUMNS",
    "REPRO_COLUMNS",
    "KEY_COLUMNS",
    "fmt",
    "write_rows",
    "feature_vector_rows",
    "write_feature_table",
    "read_feature_table",
    "write_repro_results",
    "read_repro_results",
    "write_outcomes",
    "read_outcomes",
]

FEATURE_COLUMNS = (
    "subject_id",
    "roi",
    "slice_thickness_mm",
    "asir_percent",
    "extractor",
    "feature_family",
    "feature_name",
    "value",
)
KEY_COLUMNS = ("subject_id", "roi", "slice_thickness_mm", "asir_percent", "extractor")
REPRO_COLUMNS = (
    "feature_family",
    "feature_name",
    "roi",
    "extractor",
    "kind",
    "ccc",
    "sigma2_s",
    "sigma2_t",
    "sigma2_a",
    "sigma2_e",
    "flags",
)


def fmt(value) -> str:
    """Render a cell: ``repr`` for floats, empty for missing."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "" if math.isnan(v) else repr(v)
    return str(value)


def write_rows(path, columns: Sequence[str], rows: Iterable, mode: str = "w") -> None:
    """Write dict or sequence rows under a header (header skipped when appending)."""
    path = Path(path)
    write_header = mode == "w" or not path.exists() or path.stat().st_size == 0
    with path.open(mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if write_header:
            w.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row[c] for c in columns]
            w.writerow([fmt(v) for v in row])


def feature_vector_rows(subject_id, roi, thickness, asir, extractor, values) -> list:
    """Long-format rows for one feature mapping ``(family, name) -> value``."""
    return [
        (subject_id, roi, float(thickness), None if asir is None else float(asir), extractor, fam, name, v)
        for (fam, name), v in values.items()
    ]


def write_feature_table(df: pd.DataFrame, path) -> None:
    df = df.sort_values(list(KEY_COLUMNS) + ["feature_family", "feature_name"], kind="stable")
    write_rows(path, FEATURE_COLUMNS, df[list(FEATURE_COLUMNS)].itertuples(index=False, name=None))


def read_feature_table(path) -> pd.DataFrame:
    """Load a FeatureTable CSV; empty value cells become ``NaN``."""
    df = pd.read_csv(
        path,
        dtype={"subject_id": str, "roi": str, "extractor": str, "feature_family": str, "feature_name": str},
        float_precision="round_trip",
        keep_default_na=False,
        na_values={"value": [""], "asir_percent": [""]},
    )
    missing = set(FEATURE_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    for c in ("slice_thickness_mm", "asir_percent", "value"):
        df[c] = df[c].astype(np.float64)
    return df[list(FEATURE_COLUMNS)]


def write_repro_results(results: Sequence[ReproResult], path) -> None:
    rows = []
    for r in sorted(results, key=lambda r: (r.feature_family, r.feature_name, r.roi, r.extractor, r.kind)):
        c = r.components
        rows.append(
            (
                r.feature_family,
                r.feature_name,
                r.roi,
                r.extractor,
                r.kind,
                r.ccc,
                c.sigma2_s if c else None,
                c.sigma2_t if c else None,
                c.sigma2_a if c else None,
                c.sigma2_e if c else None,
                ";".join(r.flags),
            )
        )
    write_rows(path, REPRO_COLUMNS, rows)


def read_repro_results(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            comps = None
            if row["sigma2_s"] != "":
                comps = VarianceComponents(
                    float(row["sigma2_s"]),
                    float(row["sigma2_t"]),
                    float(row["sigma2_a"]),
                    float(row["sigma2_e"]),
                    tuple(f[len("clamped:"):] for f in row["flags"].split(";") if f.startswith("clamped:")),
                )
            out.append(
                ReproResult(
                    row["feature_family"],
                    row["feature_name"],
                    row["roi"],
                    row["extractor"],
                    float(row["ccc"]) if row["ccc"] != "" else float("nan"),
                    row["kind"],
                    comps,
                    tuple(f for f in row["flags"].split(";") if f),
                )
            )
    return out


def write_outcomes(records: Sequence[SurvivalRecord], path) -> None:
    write_rows(path, ("subject_id", "time_days", "event"), [(r.subject_id, r.time, r.event) for r in records])


def read_outcomes(path) -> list:
    with open(path, newline="") as fh:
        return [
            SurvivalRecord(row["subject_id"], float(row["time_days"]), row["event"].strip().lower() in ("1", "true"))
            for row in csv.DictReader(fh)
        ]
