"""Cohort-level orchestration shared by the command line and the demos.

Work is fanned out over reconstructions with a thread pool; results are
collected in a fixed key order so outputs never depend on scheduling.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import pandas as pd

from .features.extract import ExtractionFailure, extract
from .preprocess import ExtractionConfig
from .repro_stats import ccc_spectrum, thickness_pair_wilcoxon
from .survival.cindex import SurvivalRecord
from .survival.cv import POOLED, build_design
from .tables import FEATURE_COLUMNS, KEY_COLUMNS, feature_vector_rows, read_feature_table, write_feature_table, write_rows
from .volume_io import CohortManifest, read_mask, read_volume

logger = logging.getLogger(__name__)

__all__ = [
    "default_workers",
    "extract_cohort",
    "extract_to_csv",
    "completed_keys",
    "reproducibility",
    "manifest_outcomes",
    "survival_designs",
    "synth_feature_table",
]


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _recon_groups(manifest: CohortManifest):
    groups = {}
    for e in manifest:
        groups.setdefault((e.subject_id, e.slice_thickness_mm, e.asir_percent), []).append(e)
    return [(k, groups[k]) for k in sorted(groups, key=lambda k: (k[0], k[1], -1.0 if k[2] is None else k[2]))]


def _row_key(subject, roi, t, a, extractor):
    return (str(subject), str(roi), float(t), None if a is None else float(a), str(extractor))


def _extract_group(key, entries, configs: Sequence[ExtractionConfig], skip):
    subject, t, a = key
    rows, failures = [], []
    todo = [c for c in configs if any(_row_key(subject, e.roi, t, a, c.name) not in skip for e in entries)]
    if not todo:
        return rows, failures
    paths = {e.image_path for e in entries}
    if len(paths) != 1:
        raise ValueError(f"{subject} t={t} asir={a}: ROIs point at different images")
    image = read_volume(entries[0].image_path)
    masks = {e.roi: read_mask(e.mask_path) for e in entries}
    for config in todo:
        for roi, res in extract(image, masks, config).items():
            if _row_key(subject, roi, t, a, config.name) in skip:
                continue
            if isinstance(res, ExtractionFailure):
                failures.append((subject, roi, t, a, config.name, res.reason))
            else:
                rows.extend(feature_vector_rows(subject, roi, t, a, config.name, res.values))
    return rows, failures


def extract_cohort(
    manifest: CohortManifest,
    configs: Sequence[ExtractionConfig],
    workers: int = 1,
    skip: Iterable = (),
    on_group=None,
):
    """Extract every (subject, roi, reconstruction, setting) of a cohort.

    ``skip`` holds keys ``(subject, roi, thickness, asir, extractor)``
    already done. ``on_group(rows, failures)`` is called after each
    reconstruction, in key order. Returns ``(DataFrame, failures)``.
    """
    skip = set(skip)
    groups = _recon_groups(manifest)

    def work(item):
        return _extract_group(item[0], item[1], configs, skip)

    all_rows, all_failures = [], []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(work, groups)
            for rows, failures in results:
                all_rows.extend(rows)
                all_failures.extend(failures)
                if on_group:
                    on_group(rows, failures)
    else:
        for g in groups:
            rows, failures = work(g)
            all_rows.extend(rows)
            all_failures.extend(failures)
            if on_group:
                on_group(rows, failures)
    for f in all_failures:
        logger.warning("extraction failed for %s: %s", f[:5], f[5])
    return pd.DataFrame(all_rows, columns=list(FEATURE_COLUMNS)), all_failures


FAILURE_COLUMNS = KEY_COLUMNS + ("reason",)


def completed_keys(feature_csv: Path, failure_csv: Path) -> set:
    """Keys already present in a partial run (full 93-row groups or recorded failures)."""
    from .features.registry import N_FEATURES

    done = set()
    if feature_csv.exists() and feature_csv.stat().st_size > 0:
        df = read_feature_table(feature_csv)
        sizes = df.groupby(list(KEY_COLUMNS), dropna=False).size()
        for key, n in sizes.items():
            if n == N_FEATURES:
                s, r, t, a, x = key
                done.add(_row_key(s, r, t, None if pd.isna(a) else a, x))
    if failure_csv.exists():
        fdf = pd.read_csv(failure_csv, dtype=str, keep_default_na=False)
        for row in fdf.itertuples(index=False):
            done.add(_row_key(row.subject_id, row.roi, row.slice_thickness_mm, row.asir_percent or None, row.extractor))
    return done


def extract_to_csv(manifest: CohortManifest, configs, out_csv, workers: int = 1) -> tuple:
    """Resumable extraction into ``out_csv``.

    Rows are appended as each reconstruction finishes; on completion the
    file is rewritten in sorted order, so an interrupted and resumed run
    ends with the same bytes as an uninterrupted one. Failures go to
    ``<out_csv>.failures.csv``. Returns ``(n_rows, n_failures)``.
    """
    out_csv = Path(out_csv)
    fail_csv = out_csv.with_name(out_csv.name + ".failures.csv")
    done = completed_keys(out_csv, fail_csv)
    if out_csv.exists() and done:
        # drop incomplete groups left by an interruption
        df = read_feature_table(out_csv)
        keep = [
            _row_key(s, r, t, None if pd.isna(a) else a, x) in done
            for s, r, t, a, x in df[list(KEY_COLUMNS)].itertuples(index=False, name=None)
        ]
        write_feature_table(df[keep], out_csv)
    elif out_csv.exists():
        out_csv.unlink()

    def on_group(rows, failures):
        if rows:
            write_rows(out_csv, FEATURE_COLUMNS, rows, mode="a")
        if failures:
            write_rows(fail_csv, FAILURE_COLUMNS, failures, mode="a")

    extract_cohort(manifest, configs, workers, skip=done, on_group=on_group)
    if not out_csv.exists():
        write_rows(out_csv, FEATURE_COLUMNS, [])
    df = read_feature_table(out_csv)
    write_feature_table(df, out_csv)
    n_fail = 0
    if fail_csv.exists():
        fdf = pd.read_csv(fail_csv, dtype=str, keep_default_na=False).sort_values(list(KEY_COLUMNS))
        fdf = fdf.drop_duplicates()
        write_rows(fail_csv, FAILURE_COLUMNS, fdf.itertuples(index=False, name=None))
        n_fail = len(fdf)
    return len(df), n_fail


def reproducibility(table: pd.DataFrame, reference_asir: float = 20.0):
    """Generalized and pairwise CCCs plus the thickness-pair Wilcoxon table."""
    results, excluded = ccc_spectrum(table, reference_asir=reference_asir, pairwise=True)
    return results, excluded, thickness_pair_wilcoxon(results)


def manifest_outcomes(manifest: CohortManifest) -> list:
    if not manifest.is_survival:
        raise ValueError("manifest has no survival columns")
    return [SurvivalRecord(s, t, bool(e)) for s, (t, e) in sorted(manifest.survival().items())]


def survival_designs(
    table: pd.DataFrame,
    repro_results,
    outcomes: Sequence[SurvivalRecord],
    extractors: Optional[Sequence[str]] = None,
) -> Mapping:
    """One design per extractor plus the pooled ``"all"`` design."""
    names = sorted(table["extractor"].unique()) if extractors is None else [x for x in extractors if x != POOLED]
    designs = {x: build_design(table, repro_results, outcomes, [x]) for x in names}
    designs[POOLED] = build_design(table, repro_results, outcomes, names)
    return designs


def synth_feature_table(spec, configs: Sequence[ExtractionConfig], workers: int = 1) -> pd.DataFrame:
    """Extract a synthetic cohort in memory, skipping the NIfTI round trip."""
    from .synth import generate_subject, subject_params

    def work(index):
        sid = subject_params(spec, index).subject_id
        rows = []
        for (t, a), (image, masks) in sorted(generate_subject(spec, index).items()):
            for config in configs:
                for roi, res in extract(image, masks, config).items():
                    if not isinstance(res, ExtractionFailure):
                        rows.extend(feature_vector_rows(sid, roi, t, a, config.name, res.values))
        return rows

    idx = range(spec.n_subjects)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(work, idx))
    else:
        chunks = [work(i) for i in idx]
    return pd.DataFrame([r for c in chunks for r in c], columns=list(FEATURE_COLUMNS))
