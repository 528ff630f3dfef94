"""Reproducibility statistics across reconstructions.

* Lin's concordance correlation coefficient for paired measurements.
* A generalized CCC from variance components of a balanced
  subject x thickness x ASiR layout (random subject, fixed thickness and
  ASiR effects), estimated by ANOVA method of moments:
  ``CCC = s2_subject / (s2_subject + s2_thickness + s2_error)``.
  The ASiR component is estimated and reported but not part of the ratio.
* Paired Wilcoxon signed-rank test with exact null enumeration for small n.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

__all__ = [
    "InsufficientDataError",
    "UnbalancedDesignError",
    "DegenerateDataError",
    "VarianceComponents",
    "ReproResult",
    "WilcoxonResult",
    "pairwise_ccc",
    "pearson",
    "variance_components",
    "generalized_ccc",
    "wilcoxon_signed_rank",
    "ccc_spectrum",
    "REFERENCE_ASIR",
]

REFERENCE_ASIR = 20.0
EXACT_MAX_N = 25


class InsufficientDataError(ValueError):
    pass


class UnbalancedDesignError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


# --------------------------------------------------------------------------- pairwise CCC


def pairwise_ccc(x, y, sample: bool = False) -> float:
    """Lin's concordance correlation coefficient.

    ``2 cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))**2)`` with
    population (1/n) moments, or n-1 moments when ``sample`` is set.
    Two constant series give 1 when equal and 0 otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and of equal length")
    n = x.size
    if n < 3:
        raise InsufficientDataError(f"need at least 3 pairs, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("series contain missing values")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    ddof = 1 if sample else 0
    sxx = (dx @ dx) / (n - ddof)
    syy = (dy @ dy) / (n - ddof)
    sxy = (dx @ dy) / (n - ddof)
    den = sxx + syy + (mx - my) ** 2
    if sxx == 0 and syy == 0:
        return 1.0 if mx == my else 0.0
    return float(np.clip(2.0 * sxy / den, -1.0, 1.0))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    y = np.asarray(y, dtype=np.float64) - np.mean(y)
    den = np.sqrt((x @ x) * (y @ y))
    return float(x @ y / den) if den > 0 else 0.0


# --------------------------------------------------------------------------- generalized CCC


@dataclass(frozen=True)
class VarianceComponents:
    sigma2_s: float
    sigma2_t: float
    sigma2_a: float
    sigma2_e: float
    clamped: tuple = ()

    @property
    def ccc(self) -> float:
        den = self.sigma2_s + self.sigma2_t + self.sigma2_e
        if den <= 0:
            raise DegenerateDataError("zero total variance")
        return self.sigma2_s / den


@dataclass(frozen=True)
class ReproResult:
    feature_family: str
    feature_name: str
    roi: str
    extractor: str
    ccc: float
    kind: str  # "generalized" or "pairwise:<t1>-<t2>"
    components: Optional[VarianceComponents] = None
    flags: tuple = ()

    @property
    def feature_id(self):
        return (self.feature_family, self.feature_name)


def _cube(subject, thickness, asir, value):
    subject = np.asarray(subject)
    thickness = np.asarray(thickness, dtype=np.float64)
    value = np.asarray(value, dtype=np.float64)
    if asir is None:
        asir = np.zeros_like(thickness)
    asir = np.asarray(asir, dtype=np.float64)
    asir = np.where(np.isnan(asir), -1.0, asir)
    if not np.all(np.isfinite(value)):
        raise ValueError("values contain missing entries")
    s_lv, s_idx = np.unique(subject, return_inverse=True)
    t_lv, t_idx = np.unique(thickness, return_inverse=True)
    a_lv, a_idx = np.unique(asir, return_inverse=True)
    shape = (len(s_lv), len(t_lv), len(a_lv))
    counts = np.zeros(shape, dtype=np.int64)
    np.add.at(counts, (s_idx, t_idx, a_idx), 1)
    if not np.all(counts == 1):
        raise UnbalancedDesignError(
            f"design is unbalanced: {int((counts == 0).sum())} empty and {int((counts > 1).sum())} repeated cells"
        )
    cube = np.empty(shape)
    cube[s_idx, t_idx, a_idx] = value
    return cube


def variance_components(cube: np.ndarray) -> VarianceComponents:
    """Method-of-moments components of a complete ``subject x thickness x asir`` array."""
    n, T, A = cube.shape
    if n < 2:
        raise InsufficientDataError("need at least 2 subjects")
    if T < 2:
        raise InsufficientDataError("need at least 2 thickness levels")
    grand = cube.mean()
    s_eff = cube.mean(axis=(1, 2)) - grand
    t_eff = cube.mean(axis=(0, 2)) - grand
    a_eff = cube.mean(axis=(0, 1)) - grand
    resid = cube - s_eff[:, None, None] - t_eff[None, :, None] - a_eff[None, None, :] - grand
    df_e = n * T * A - n - T - A + 2
    ms_s = T * A * (s_eff @ s_eff) / (n - 1)
    ms_t = n * A * (t_eff @ t_eff) / (T - 1)
    ms_a = n * T * (a_eff @ a_eff) / (A - 1) if A > 1 else 0.0
    ms_e = float((resid**2).sum() / df_e) if df_e > 0 else 0.0
    if ms_s == 0 and ms_t == 0 and ms_a == 0 and ms_e == 0:
        raise DegenerateDataError("zero total variance")
    raw = {
        "sigma2_s": (ms_s - ms_e) / (T * A),
        "sigma2_t": (ms_t - ms_e) / (n * A),
        "sigma2_a": (ms_a - ms_e) / (n * T) if A > 1 else 0.0,
    }
    clamped = tuple(k for k, v in raw.items() if v < 0)
    comps = {k: max(float(v), 0.0) for k, v in raw.items()}
    return VarianceComponents(sigma2_e=ms_e, clamped=clamped, **comps)


def generalized_ccc(subject, thickness, asir, value) -> VarianceComponents:
    """Variance components (and ``.ccc``) from a long table of one feature.

    Every subject must be observed exactly once in every
    (thickness, asir) cell. ``asir`` may be None for a single level.
    """
    comps = variance_components(_cube(subject, thickness, asir, value))
    den = comps.sigma2_s + comps.sigma2_t + comps.sigma2_e
    if den <= 0:
        raise DegenerateDataError("zero variance after clamping")
    if comps.clamped:
        logger.debug("negative variance estimates clamped: %s", comps.clamped)
    return comps


# --------------------------------------------------------------------------- Wilcoxon


class WilcoxonResult(NamedTuple):
    statistic: float  # sum of positive ranks
    pvalue: float
    n: int
    method: str
    all_zero: bool = False


def _exact_pvalue(ranks2: np.ndarray, t2: int) -> float:
    """Two-sided p for doubled-rank statistic ``t2`` by enumerating sign patterns."""
    total = int(ranks2.sum())
    dist = np.zeros(total + 1, dtype=np.float64)
    dist[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: total + 1 - r]
        dist = dist + shifted
    dist /= dist.sum()
    lower = dist[: t2 + 1].sum()
    upper = dist[t2:].sum()
    return float(min(1.0, 2.0 * min(lower, upper)))


def wilcoxon_signed_rank(x, y=None, method: str = "auto") -> WilcoxonResult:
    """Paired two-sided Wilcoxon signed-rank test of ``x - y``.

    Zero differences are dropped and tied magnitudes get mid-ranks. The
    null distribution is enumerated exactly for n <= 25 (``method="auto"``),
    otherwise a normal approximation with tie and continuity correction is
    used. All-zero differences give p = 1 with ``all_zero`` set.
    """
    d = np.asarray(x, dtype=np.float64)
    if y is not None:
        d = d - np.asarray(y, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "none", True)
    ranks = stats.rankdata(np.abs(d))
    t_plus = float(ranks[d > 0].sum())
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "approx"
    if method == "exact":
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        p = _exact_pvalue(ranks2, int(round(2 * t_plus)))
    elif method == "approx":
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - ((tie_counts**3 - tie_counts).sum()) / 48.0
        if var <= 0:
            p = 1.0
        else:
            z = max(abs(t_plus - mean) - 0.5, 0.0) / np.sqrt(var)
            p = float(min(1.0, 2.0 * stats.norm.sf(z)))
    else:
        raise ValueError(f"unknown method {method!r}")
    return WilcoxonResult(t_plus, p, n, method)


# --------------------------------------------------------------------------- spectrum


def ccc_spectrum(table, reference_asir: float = REFERENCE_ASIR, pairwise: bool = True):
    """Generalized (and pairwise) CCCs for every (feature, roi, extractor).

    ``table`` is a FeatureTable data frame covering a reconstruction grid.
    Returns ``(results, excluded)`` where ``excluded`` lists the
    ``(family, name, roi, extractor)`` keys dropped because of missing
    values or a degenerate design.
    """
    results = []
    excluded = []
    keys = ["feature_family", "feature_name", "roi", "extractor"]
    for key, grp in table.groupby(keys, sort=True):
        family, name, roi, extractor = key
        if grp["value"].isna().any():
            excluded.append(key)
            continue
        try:
            comps = generalized_ccc(
                grp["subject_id"].to_numpy(),
                grp["slice_thickness_mm"].to_numpy(),
                grp["asir_percent"].to_numpy(dtype=np.float64),
                grp["value"].to_numpy(),
            )
            ccc = comps.ccc
        except DegenerateDataError:
            excluded.append(key)
            continue
        flags = tuple(f"clamped:{c}" for c in comps.clamped)
        results.append(ReproResult(family, name, roi, extractor, float(ccc), "generalized", comps, flags))

        if not pairwise:
            continue
        asir = grp["asir_percent"].to_numpy(dtype=np.float64)
        ref = grp[np.isclose(asir, reference_asir)] if np.isfinite(asir).any() else grp
        if ref.empty:
            continue
        wide = ref.pivot(index="subject_id", columns="slice_thickness_mm", values="value").sort_index()
        for t1, t2 in itertools.combinations(sorted(wide.columns), 2):
            pair = wide[[t1, t2]].dropna()
            try:
                c = pairwise_ccc(pair[t1].to_numpy(), pair[t2].to_numpy())
            except InsufficientDataError:
                continue
            results.append(ReproResult(family, name, roi, extractor, c, f"pairwise:{t1:g}-{t2:g}"))
    return results, excluded


def thickness_pair_wilcoxon(results: Sequence[ReproResult]) -> list:
    """Compare pairwise-CCC distributions between thickness pairs per extractor.

    For each extractor and each two thickness pairs, the CCCs of the same
    (feature, roi) are paired and tested. Returns dict rows.
    """
    by = {}
    for r in results:
        if r.kind.startswith("pairwise:"):
            by.setdefault(r.extractor, {}).setdefault(r.kind.split(":", 1)[1], {})[(r.feature_id, r.roi)] = r.ccc
    rows = []
    for extractor in sorted(by):
        pairs = by[extractor]
        for a, b in itertools.combinations(sorted(pairs), 2):
            common = sorted(set(pairs[a]) & set(pairs[b]))
            if not common:
                continue
            xa = np.array([pairs[a][k] for k in common])
            xb = np.array([pairs[b][k] for k in common])
            w = wilcoxon_signed_rank(xa, xb)
            rows.append(
                {
                    "extractor": extractor,
                    "pair_a": a,
                    "pair_b": b,
                    "n": w.n,
                    "median_ccc_a": float(np.median(xa)),
                    "median_ccc_b": float(np.median(xb)),
                    "statistic": w.statistic,
                    "pvalue": w.pvalue,
                    "method": w.method,
                }
            )
    return rows
