"""Repeated, stratified k-fold cross-validation of the Cox model-building protocol.

Within every training fold: CCC-threshold filter, univariate C-index filter,
univariate Cox p-value filter, MRMR down to the target count, then a
multivariable Cox fit that scores the held-out fold. Every random draw comes
from a stream derived from ``(rng_seed, repetition)`` so results do not
depend on scheduling or worker count.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .cindex import NoComparablePairsError, cindex_columns, comparable_pairs, harrell_cindex
from .cox import CollinearityError, cox_fit, univariate_cox
from .mrmr import mrmr_select

logger = logging.getLogger(__name__)

__all__ = [
    "CCC_THRESHOLDS",
    "FEATURE_COUNTS",
    "CVConfig",
    "SurvivalDesign",
    "FoldResult",
    "PerformanceSummary",
    "build_design",
    "stratified_folds",
    "run_cv",
    "run_cv_counts",
    "GridSpec",
    "load_grid",
    "run_grid",
    "SUMMARY_COLUMNS",
]

CCC_THRESHOLDS = (0.0, 0.8, 0.85, 0.9, 0.95)
FEATURE_COUNTS = (1, 2, 4, 8, 16, 32, 64)
POOLED = "all"
SUMMARY_COLUMNS = (
    "extractor",
    "ccc_threshold",
    "n_features",
    "mean_test_cindex",
    "ci_lo",
    "ci_hi",
    "mean_train_cindex",
    "liver_fraction",
)


@dataclass(frozen=True)
class CVConfig:
    ccc_threshold: float = 0.85
    feature_count: int = 4
    folds: int = 10
    repetitions: int = 100
    univariate_cindex_min: float = 0.55
    univariate_p_max: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if not any(np.isclose(self.ccc_threshold, t) for t in CCC_THRESHOLDS):
            raise ValueError(f"ccc_threshold must be one of {CCC_THRESHOLDS}")
        if self.feature_count not in FEATURE_COUNTS:
            raise ValueError(f"feature_count must be one of {FEATURE_COUNTS}")
        if self.folds < 2 or self.repetitions < 1:
            raise ValueError("need folds >= 2 and repetitions >= 1")


@dataclass(frozen=True)
class SurvivalDesign:
    """Subject-by-feature matrix with outcomes and per-column metadata.

    ``X`` holds ``nan`` for missing values; ``ccc`` holds ``nan`` for
    features without a reproducibility estimate.
    """

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    subject_ids: tuple
    feature_ids: tuple
    rois: tuple
    ccc: np.ndarray

    @property
    def n_subjects(self) -> int:
        return self.X.shape[0]

    def eligible(self, threshold: float) -> np.ndarray:
        """Columns passing the CCC filter; unknown CCC only passes at 0."""
        if threshold <= 0:
            return np.ones(self.X.shape[1], dtype=bool)
        with np.errstate(invalid="ignore"):
            return self.ccc >= threshold


def feature_label(roi, extractor, family, name) -> str:
    return f"{roi}/{extractor}/{family}/{name}"


def build_design(table, repro_results, outcomes, extractors: Optional[Sequence[str]] = None) -> SurvivalDesign:
    """Assemble a :class:`SurvivalDesign` from long-format tables.

    Parameters
    ----------
    table : pandas.DataFrame
        FeatureTable rows with exactly one reconstruction per subject.
    repro_results : iterable of ReproResult
        Only generalized CCCs are used.
    outcomes : iterable of SurvivalRecord
    extractors : sequence of str, optional
        Restrict to these extractors; all present are pooled by default.
    """
    df = table
    if extractors is not None:
        df = df[df["extractor"].isin(list(extractors))]
    if df.empty:
        raise ValueError("no feature rows for the requested extractor(s)")
    recon = df.groupby(["subject_id", "roi", "extractor", "feature_family", "feature_name"]).size()
    if (recon > 1).any():
        raise ValueError("survival features must have one reconstruction per subject")
    out = {o.subject_id: o for o in outcomes}
    df = df[df["subject_id"].isin(list(out))]
    # plain pivot: only (roi, extractor, family, name) combinations present in the table
    wide = df.pivot(index="subject_id", columns=["roi", "extractor", "feature_family", "feature_name"], values="value")
    wide = wide.reindex(sorted(wide.columns), axis=1).sort_index()
    ccc_map = {
        (r.roi, r.extractor, r.feature_family, r.feature_name): r.ccc
        for r in repro_results
        if r.kind == "generalized"
    }
    cols = list(wide.columns)
    subjects = tuple(str(s) for s in wide.index)
    return SurvivalDesign(
        X=wide.to_numpy(dtype=np.float64),
        time=np.array([out[s].time for s in subjects], dtype=np.float64),
        event=np.array([out[s].event for s in subjects], dtype=bool),
        subject_ids=subjects,
        feature_ids=tuple(feature_label(*c) for c in cols),
        rois=tuple(c[0] for c in cols),
        ccc=np.array([ccc_map.get(c, np.nan) for c in cols], dtype=np.float64),
    )


def stratified_folds(event, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold label per subject, balancing events and censored cases."""
    event = np.asarray(event, dtype=bool)
    perm = rng.permutation(event.size)
    ordered = np.concatenate([perm[event[perm]], perm[~event[perm]]])
    labels = np.empty(event.size, dtype=np.int64)
    labels[ordered] = np.arange(event.size) % folds
    return labels


@dataclass(frozen=True)
class FoldResult:
    test_index: np.ndarray
    test_risk: np.ndarray
    train_cindex: float
    selected: tuple
    flags: tuple = ()


def _screen(design: SurvivalDesign, cols, tr, te, config: CVConfig):
    """Training-only filters; returns z-scored matrices, kept columns, relevance."""
    X = design.X
    Xtr = X[np.ix_(tr, cols)]
    Xte = X[np.ix_(te, cols)]
    ok = np.isfinite(Xtr).all(axis=0) & np.isfinite(Xte).all(axis=0)
    ok &= np.ptp(np.where(np.isfinite(Xtr), Xtr, 0.0), axis=0) > 0
    cols, Xtr, Xte = cols[ok], Xtr[:, ok], Xte[:, ok]
    if cols.size == 0:
        return cols, Xtr, Xte, np.zeros(0)
    mu = Xtr.mean(axis=0)
    sd = Xtr.std(axis=0)
    keep = sd > 0
    cols, mu, sd = cols[keep], mu[keep], sd[keep]
    Ztr = (Xtr[:, keep] - mu) / sd
    Zte = (Xte[:, keep] - mu) / sd
    t, e = design.time[tr], design.event[tr]
    c = cindex_columns(Ztr, pairs=comparable_pairs(t, e))
    folded = np.maximum(c, 1.0 - c)
    keep = folded >= config.univariate_cindex_min
    cols, Ztr, Zte, folded = cols[keep], Ztr[:, keep], Zte[:, keep], folded[keep]
    if cols.size == 0:
        return cols, Ztr, Zte, folded
    _, _, p, _ = univariate_cox(Ztr, t, e)
    keep = p < config.univariate_p_max
    return cols[keep], Ztr[:, keep], Zte[:, keep], folded[keep]


def _fit_selected(design, Ztr, Zte, names, tr):
    """Multivariable Cox fit, dropping the latest collinear pick until it fits."""
    flags = []
    names = list(names)
    idx = list(range(len(names)))
    while idx:
        try:
            model = cox_fit(Ztr[:, idx], design.time[tr], design.event[tr], [names[i] for i in idx])
        except CollinearityError as exc:
            bad = set(exc.columns) or {names[idx[-1]]}
            drop = max(i for i in idx if names[i] in bad) if any(names[i] in bad for i in idx) else idx[-1]
            idx.remove(drop)
            flags.append("collinear_drop")
            continue
        if not model.converged:
            flags.append("cox_not_converged")
        return model, idx, flags
    return None, [], flags


def _run_fold(design, cols, tr, te, config, counts):
    cols, Ztr, Zte, rel = _screen(design, cols, tr, te, config)
    out = {}
    if cols.size == 0:
        for k in counts:
            out[k] = FoldResult(te, np.zeros(te.size), 0.5, (), ("null_model",))
        return out
    ids = [design.feature_ids[c] for c in cols]
    order = mrmr_select(Ztr, rel - 0.5, max(counts), ids)
    pos = {fid: i for i, fid in enumerate(ids)}
    for k in counts:
        picks = [pos[f] for f in order[:k]]
        model, used, flags = _fit_selected(design, Ztr[:, picks], Zte[:, picks], [ids[p] for p in picks], tr)
        if model is None:
            out[k] = FoldResult(te, np.zeros(te.size), 0.5, (), tuple(flags) + ("null_model",))
            continue
        cols_used = [picks[u] for u in used]
        risk_tr = Ztr[:, cols_used] @ model.coefficients
        try:
            c_tr = harrell_cindex(risk_tr, design.time[tr], design.event[tr])
        except NoComparablePairsError:
            c_tr = float("nan")
        out[k] = FoldResult(te, Zte[:, cols_used] @ model.coefficients, c_tr, tuple(ids[c] for c in cols_used), tuple(flags))
    return out


def _run_repetition(design: SurvivalDesign, config: CVConfig, counts, rep: int):
    rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, rep]))
    labels = stratified_folds(design.event, config.folds, rng)
    cols = np.flatnonzero(design.eligible(config.ccc_threshold))
    per_k = {k: [] for k in counts}
    for f in range(config.folds):
        tr = np.flatnonzero(labels != f)
        te = np.flatnonzero(labels == f)
        for k, res in _run_fold(design, cols, tr, te, config, counts).items():
            per_k[k].append(res)
    return per_k


@dataclass(frozen=True)
class PerformanceSummary:
    """Cross-validated performance of one configuration.

    ``ci_lo``/``ci_hi`` are the 2.5th/97.5th percentiles of the
    per-repetition test C-index.
    """

    config: CVConfig
    test_cindex: tuple
    train_cindex: tuple
    mean_test: float
    ci_lo: float
    ci_hi: float
    mean_train: float
    liver_fraction: float
    selection_counts: Mapping = field(default_factory=dict)
    n_folds: int = 0
    null_folds: int = 0
    flags: Mapping = field(default_factory=dict)
    fold_selections: tuple = ()

    def metrics(self) -> tuple:
        """Everything except the configuration, for equality checks."""
        return (
            self.test_cindex,
            self.train_cindex,
            self.mean_test,
            self.ci_lo,
            self.ci_hi,
            self.mean_train,
            self.liver_fraction,
            tuple(sorted(self.selection_counts.items())),
            self.null_folds,
            self.fold_selections,
        )

    def selection_rate(self, feature_id: str) -> float:
        return self.selection_counts.get(feature_id, 0) / self.n_folds if self.n_folds else 0.0

    def any_selected_rate(self, feature_ids) -> float:
        """Fraction of folds whose selection contains at least one of ``feature_ids``."""
        wanted = set(feature_ids)
        if not self.fold_selections:
            return 0.0
        return sum(bool(wanted.intersection(s)) for s in self.fold_selections) / len(self.fold_selections)


def _summarise(design, config, reps) -> PerformanceSummary:
    test, train, liver = [], [], []
    counts = {}
    flags = {}
    null_folds = 0
    selections = []
    roi_of = dict(zip(design.feature_ids, design.rois))
    for folds in reps:
        idx = np.concatenate([f.test_index for f in folds])
        risk = np.concatenate([f.test_risk for f in folds])
        try:
            test.append(harrell_cindex(risk, design.time[idx], design.event[idx]))
        except NoComparablePairsError:
            test.append(float("nan"))
        train.append(float(np.nanmean([f.train_cindex for f in folds])))
        fr = []
        for f in folds:
            selections.append(f.selected)
            for fid in f.selected:
                counts[fid] = counts.get(fid, 0) + 1
            for fl in f.flags:
                flags[fl] = flags.get(fl, 0) + 1
            if "null_model" in f.flags:
                null_folds += 1
            if f.selected:
                fr.append(sum(roi_of[s] == "liver" for s in f.selected) / len(f.selected))
        liver.append(float(np.mean(fr)) if fr else float("nan"))
    if flags.get("cox_not_converged"):
        logger.warning(
            "ccc>=%g k=%d: %d of %d fold fits did not converge",
            config.ccc_threshold, config.feature_count, flags["cox_not_converged"], config.folds * config.repetitions,
        )
    t = np.asarray(test)
    mean = float(np.nanmean(t))
    lo, hi = np.nanpercentile(t, [2.5, 97.5])
    return PerformanceSummary(
        config=config,
        test_cindex=tuple(test),
        train_cindex=tuple(train),
        mean_test=mean,
        # percentile bounds can miss the mean on degenerate samples
        ci_lo=float(min(lo, mean)),
        ci_hi=float(max(hi, mean)),
        mean_train=float(np.nanmean(train)),
        liver_fraction=float(np.nanmean(liver)) if np.isfinite(liver).any() else float("nan"),
        selection_counts=dict(sorted(counts.items())),
        n_folds=config.folds * config.repetitions,
        null_folds=null_folds,
        flags=dict(sorted(flags.items())),
        fold_selections=tuple(selections),
    )


def run_cv_counts(design: SurvivalDesign, config: CVConfig, feature_counts=None, workers: int = 1) -> dict:
    """Run the protocol for several feature counts in one pass.

    Greedy MRMR picks for a smaller count are a prefix of those for a
    larger one, so screening and selection are shared; only the final Cox
    fits differ. Returns ``{count: PerformanceSummary}``.
    """
    counts = tuple(sorted(set(feature_counts or (config.feature_count,))))
    for k in counts:
        CVConfig(config.ccc_threshold, k)
    if design.n_subjects < config.folds:
        raise ValueError("fewer subjects than folds")
    reps = range(config.repetitions)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: _run_repetition(design, config, counts, r), reps))
    else:
        results = [_run_repetition(design, config, counts, r) for r in reps]
    out = {}
    for k in counts:
        cfg = CVConfig(**{**config.__dict__, "feature_count": k})
        out[k] = _summarise(design, cfg, [r[k] for r in results])
    return out


def run_cv(design: SurvivalDesign, config: CVConfig, workers: int = 1) -> PerformanceSummary:
    """Repeated cross-validation of one configuration."""
    return run_cv_counts(design, config, (config.feature_count,), workers)[config.feature_count]


# --------------------------------------------------------------------------- grid


@dataclass(frozen=True)
class GridSpec:
    extractors: tuple
    ccc_thresholds: tuple = CCC_THRESHOLDS
    feature_counts: tuple = FEATURE_COUNTS
    folds: int = 10
    repetitions: int = 100
    rng_seed: int = 0

    @property
    def n_cells(self) -> int:
        return len(self.extractors) * len(self.ccc_thresholds) * len(self.feature_counts)


def load_grid(path, default_extractors: Sequence[str] = ()) -> GridSpec:
    """Read a JSON run matrix.

    Keys: ``extractors`` (setting names, ``"all"`` for the pooled set),
    ``ccc_thresholds``, ``feature_counts``, ``folds``, ``repetitions``,
    ``rng_seed``; all optional.
    """
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - {"extractors", "ccc_thresholds", "feature_counts", "folds", "repetitions", "rng_seed"}
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    extractors = tuple(raw.get("extractors", tuple(default_extractors) + (POOLED,)))
    spec = GridSpec(
        extractors=extractors,
        ccc_thresholds=tuple(float(x) for x in raw.get("ccc_thresholds", CCC_THRESHOLDS)),
        feature_counts=tuple(int(x) for x in raw.get("feature_counts", FEATURE_COUNTS)),
        folds=int(raw.get("folds", 10)),
        repetitions=int(raw.get("repetitions", 100)),
        rng_seed=int(raw.get("rng_seed", 0)),
    )
    for t in spec.ccc_thresholds:
        for k in spec.feature_counts:
            CVConfig(t, k, spec.folds, spec.repetitions)
    return spec


def run_grid(designs: Mapping[str, SurvivalDesign], grid: GridSpec, workers: Optional[int] = None) -> list:
    """Evaluate every grid cell; one summary row (dict) per cell.

    ``designs`` maps an extractor label (or ``"all"``) to its design
    matrix. Rows come out in (extractor, threshold, count) order.
    """
    workers = workers or os.cpu_count() or 1
    rows = []
    for extractor in grid.extractors:
        if extractor not in designs:
            raise KeyError(f"no design for extractor {extractor!r}")
        for t in grid.ccc_thresholds:
            cfg = CVConfig(t, grid.feature_counts[0], grid.folds, grid.repetitions, rng_seed=grid.rng_seed)
            summaries = run_cv_counts(designs[extractor], cfg, grid.feature_counts, workers)
            for k in grid.feature_counts:
                rows.append(summary_row(extractor, summaries[k]))
    return rows


def summary_row(extractor: str, s: PerformanceSummary) -> dict:
    return {
        "extractor": extractor,
        "ccc_threshold": s.config.ccc_threshold,
        "n_features": s.config.feature_count,
        "mean_test_cindex": s.mean_test,
        "ci_lo": s.ci_lo,
        "ci_hi": s.ci_hi,
        "mean_train_cindex": s.mean_train,
        "liver_fraction": s.liver_fraction,
    }
