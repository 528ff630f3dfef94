"""Clustering and Pareto trade-off analysis of reproducibility and discrimination.

Ward linkage and optimal leaf ordering come from :mod:`scipy.cluster`;
reports are plain CSV plus small hand-written SVG files so that reruns are
byte-identical.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.cluster import hierarchy

from .tables import fmt, write_rows

logger = logging.getLogger(__name__)

__all__ = [
    "Dendrogram",
    "ParetoPoint",
    "ward_cluster",
    "dominates",
    "pareto_front",
    "per_feature_extractor_fronts",
    "ExtractorFronts",
    "univariate_cindex_rows",
    "heatmap_svg",
    "scatter_svg",
    "emit_reports",
]

OLO_MAX_LEAVES = 2000


@dataclass(frozen=True)
class Dendrogram:
    """Ward merge tree in scipy's linkage convention.

    ``merges`` rows are ``(node_a, node_b, height, size)``; nodes
    ``>= n_leaves`` refer to earlier merges. ``leaf_order`` lists leaf
    indices (into ``labels``) left to right.
    """

    labels: tuple
    merges: tuple
    leaf_order: tuple
    dropped: tuple = ()

    @property
    def n_leaves(self) -> int:
        return len(self.labels)

    @property
    def heights(self) -> np.ndarray:
        return np.array([m[2] for m in self.merges])

    def ordered_labels(self) -> list:
        return [self.labels[i] for i in self.leaf_order]

    def linkage_matrix(self) -> np.ndarray:
        return np.array(self.merges, dtype=np.float64).reshape(-1, 4)

    def clusters(self, k: int) -> np.ndarray:
        """Flat cluster id (1-based) of each leaf when cut into ``k`` clusters."""
        if self.n_leaves < 2:
            return np.ones(self.n_leaves, dtype=int)
        return hierarchy.fcluster(self.linkage_matrix(), t=min(k, self.n_leaves), criterion="maxclust")


def ward_cluster(matrix, labels: Optional[Sequence] = None, axis: int = 0) -> Dendrogram:
    """Ward clustering (Euclidean) of the rows (``axis=0``) or columns of ``matrix``.

    Rows with missing entries are dropped and reported in ``dropped``.
    The leaf order is refined by optimal leaf ordering up to 2000 leaves;
    larger trees keep scipy's default order with a warning.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if axis == 1:
        M = M.T
    elif axis != 0:
        raise ValueError("axis must be 0 or 1")
    labels = list(range(M.shape[0])) if labels is None else list(labels)
    if len(labels) != M.shape[0]:
        raise ValueError("labels do not match the clustered axis")
    ok = np.isfinite(M).all(axis=1)
    dropped = tuple(l for l, keep in zip(labels, ok) if not keep)
    if dropped:
        logger.info("ward_cluster: dropped %d row(s) with missing values", len(dropped))
    M = M[ok]
    labels = [l for l, keep in zip(labels, ok) if keep]
    n = M.shape[0]
    if n < 2:
        raise ValueError("need at least 2 complete rows to cluster")
    Z = hierarchy.linkage(M, method="ward", metric="euclidean")
    if n <= OLO_MAX_LEAVES:
        Z = hierarchy.optimal_leaf_ordering(Z, M)
    else:
        warnings.warn(f"{n} leaves: skipping optimal leaf ordering", RuntimeWarning, stacklevel=2)
    order = hierarchy.leaves_list(Z)
    merges = tuple((int(a), int(b), float(h), int(s)) for a, b, h, s in Z)
    return Dendrogram(tuple(labels), merges, tuple(int(i) for i in order), dropped)


# --------------------------------------------------------------------------- Pareto


@dataclass(frozen=True)
class ParetoPoint:
    feature_id: str
    roi: str
    extractor: str
    ccc: float
    cindex: float

    def __post_init__(self):
        if not (np.isfinite(self.ccc) and np.isfinite(self.cindex)):
            raise ValueError("Pareto coordinates must be finite")


def dominates(q: ParetoPoint, p: ParetoPoint) -> bool:
    """``q`` is at least as good on both objectives and better on one."""
    return q.ccc >= p.ccc and q.cindex >= p.cindex and (q.ccc > p.ccc or q.cindex > p.cindex)


def _sort_key(p: ParetoPoint):
    return (-p.ccc, -p.cindex, p.feature_id, p.roi, p.extractor)


def pareto_front(points: Iterable[ParetoPoint]) -> list:
    """Non-dominated points (maximizing both CCC and C-index).

    Equal points never dominate each other, so duplicates of an efficient
    point are all kept. Sorted by descending CCC.
    """
    pts = sorted(points, key=_sort_key)
    if not pts:
        raise ValueError("empty point set")
    front = []
    best_above = -np.inf  # best C-index among strictly larger CCC values
    i = 0
    while i < len(pts):
        j = i
        while j < len(pts) and pts[j].ccc == pts[i].ccc:
            j += 1
        top = pts[i].cindex  # groups are sorted by descending C-index
        if top > best_above:
            front.extend(p for p in pts[i:j] if p.cindex == top)
            best_above = top
        i = j
    return front


@dataclass(frozen=True)
class ExtractorFronts:
    """Per-feature extractor sets plus the global counting tables."""

    best_ccc: Mapping
    best_cindex: Mapping
    front: Mapping
    counts: Mapping
    dedup_counts: Mapping
    excluded: tuple


def per_feature_extractor_fronts(rows: Iterable[Mapping]) -> ExtractorFronts:
    """Compare extractors feature by feature.

    ``rows`` carry ``feature_family``, ``feature_name``, ``roi``,
    ``extractor``, ``ccc`` and ``cindex``. A feature is identified by
    (roi, family, name). For each feature the extractors reaching the
    maximum CCC, the maximum C-index, and the Pareto front over
    extractors are reported. ``counts[kind][extractor]`` tallies how often
    each extractor lands in each set; ``dedup_counts`` counts features
    whose statistics agree across every extractor only once, splitting
    that unit between them.
    """
    by_feature = {}
    excluded = []
    for r in rows:
        key = (r["roi"], r["feature_family"], r["feature_name"])
        ccc, cidx = r.get("ccc"), r.get("cindex")
        if ccc is None or cidx is None or not (np.isfinite(ccc) and np.isfinite(cidx)):
            excluded.append(key + (r["extractor"],))
            continue
        by_feature.setdefault(key, []).append(ParetoPoint("/".join(key), key[0], r["extractor"], float(ccc), float(cidx)))
    best_ccc, best_c, front = {}, {}, {}
    kinds = ("best_ccc", "best_cindex", "front")
    extractors = sorted({p.extractor for pts in by_feature.values() for p in pts})
    counts = {k: dict.fromkeys(extractors, 0) for k in kinds}
    dedup = {k: dict.fromkeys(extractors, 0.0) for k in kinds}
    profiles = {}
    for key in sorted(by_feature):
        pts = by_feature[key]
        mc = max(p.ccc for p in pts)
        mi = max(p.cindex for p in pts)
        best_ccc[key] = frozenset(p.extractor for p in pts if p.ccc == mc)
        best_c[key] = frozenset(p.extractor for p in pts if p.cindex == mi)
        front[key] = frozenset(p.extractor for p in pareto_front(pts))
        profile = tuple(sorted((p.extractor, p.ccc, p.cindex) for p in pts))
        profiles.setdefault(profile, []).append(key)
    sets = {"best_ccc": best_ccc, "best_cindex": best_c, "front": front}
    for kind, mapping in sets.items():
        for key, exs in mapping.items():
            for x in exs:
                counts[kind][x] += 1
    for keys in profiles.values():
        w = 1.0 / len(keys)
        for key in keys:
            for kind, mapping in sets.items():
                for x in mapping[key]:
                    dedup[kind][x] += w
    return ExtractorFronts(best_ccc, best_c, front, counts, dedup, tuple(sorted(excluded)))


def univariate_cindex_rows(designs: Mapping) -> list:
    """Folded univariate C-index of every feature column in each design.

    ``designs`` maps extractor names to :class:`~radrepro.survival.cv.SurvivalDesign`;
    the pooled ``"all"`` design is skipped. Columns with missing values
    are scored on the complete subjects only.
    """
    from .survival.cindex import NoComparablePairsError, harrell_cindex

    rows = []
    for extractor in sorted(designs):
        if extractor == "all":
            continue
        d = designs[extractor]
        for k, fid in enumerate(d.feature_ids):
            roi, ex, family, name = fid.split("/", 3)
            x = d.X[:, k]
            ok = np.isfinite(x)
            try:
                c = harrell_cindex(x[ok], d.time[ok], d.event[ok])
            except NoComparablePairsError:
                continue
            rows.append(
                {"feature_family": family, "feature_name": name, "roi": roi, "extractor": ex, "cindex": max(c, 1.0 - c), "negated": c < 0.5}
            )
    return rows


# --------------------------------------------------------------------------- SVG

_PALETTE = np.array(
    [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=np.float64
)


def _colour(v, lo, hi):
    if v is None or not np.isfinite(v):
        return "#cccccc"
    t = 0.0 if hi <= lo else float(np.clip((v - lo) / (hi - lo), 0.0, 1.0))
    pos = t * (len(_PALETTE) - 1)
    k = min(int(pos), len(_PALETTE) - 2)
    c = _PALETTE[k] + (pos - k) * (_PALETTE[k + 1] - _PALETTE[k])
    return "#%02x%02x%02x" % tuple(int(round(x)) for x in c)


def _esc(text) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def heatmap_svg(values, row_labels, col_labels, title: str = "", lo=None, hi=None, cell: int = 12) -> str:
    """A heatmap with one ``<rect class="cell">`` per entry; values in ``data-value``."""
    V = np.asarray(values, dtype=np.float64)
    finite = V[np.isfinite(V)]
    lo = float(finite.min()) if lo is None and finite.size else (0.0 if lo is None else lo)
    hi = float(finite.max()) if hi is None and finite.size else (1.0 if hi is None else hi)
    left, top = 260, 150
    w = left + cell * V.shape[1] + 20
    h = top + cell * V.shape[0] + 20
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" data-rows="{V.shape[0]}" data-cols="{V.shape[1]}" data-min="{fmt(lo)}" data-max="{fmt(hi)}">',
        f'<text x="4" y="14" font-size="12">{_esc(title)}</text>',
    ]
    for j, lab in enumerate(col_labels):
        x = left + j * cell + cell // 2
        out.append(f'<text class="col" x="{x}" y="{top - 4}" font-size="8" transform="rotate(-90 {x} {top - 4})">{_esc(lab)}</text>')
    for i, lab in enumerate(row_labels):
        y = top + i * cell
        out.append(f'<text class="row" x="{left - 4}" y="{y + cell - 3}" font-size="8" text-anchor="end">{_esc(lab)}</text>')
        for j in range(V.shape[1]):
            v = V[i, j]
            out.append(
                f'<rect class="cell" x="{left + j * cell}" y="{y}" width="{cell}" height="{cell}" fill="{_colour(v, lo, hi)}" data-value="{fmt(v)}"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_svg(points: Sequence[ParetoPoint], front: Sequence[ParetoPoint], title: str = "") -> str:
    """CCC vs C-index scatter; front members carry ``class="front"``."""
    on_front = {(p.feature_id, p.roi, p.extractor) for p in front}
    W, H, m = 480, 360, 40
    xs = [p.ccc for p in points]
    ys = [p.cindex for p in points]
    x0, x1 = min(xs + [0.0]), max(xs + [1.0])
    y0, y1 = min(ys + [0.5]), max(ys + [1.0])

    def sx(v):
        return m + (v - x0) / (x1 - x0) * (W - 2 * m)

    def sy(v):
        return H - m - (v - y0) / (y1 - y0) * (H - 2 * m)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" data-points="{len(points)}" data-front="{len(front)}">',
        f'<text x="4" y="14" font-size="12">{_esc(title)}</text>',
        f'<text x="{W // 2}" y="{H - 8}" font-size="10">CCC</text>',
        f'<text x="8" y="{H // 2}" font-size="10">C-index</text>',
    ]
    for p in sorted(points, key=_sort_key):
        cls = "front" if (p.feature_id, p.roi, p.extractor) in on_front else "point"
        fill = "#d62728" if cls == "front" else "#7f7f7f"
        out.append(
            f'<circle class="{cls}" cx="{sx(p.ccc):.2f}" cy="{sy(p.cindex):.2f}" r="{3 if cls == "front" else 2}" fill="{fill}" '
            f'data-feature="{_esc(p.feature_id)}" data-roi="{_esc(p.roi)}" data-extractor="{_esc(p.extractor)}"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- reports


def _matrix(rows, row_key, col_key, value_key):
    rl = sorted({row_key(r) for r in rows})
    cl = sorted({col_key(r) for r in rows})
    ri = {k: i for i, k in enumerate(rl)}
    ci = {k: i for i, k in enumerate(cl)}
    M = np.full((len(rl), len(cl)), np.nan)
    for r in rows:
        M[ri[row_key(r)], ci[col_key(r)]] = r[value_key]
    return M, rl, cl


def _clustered_heatmap(M, rl, cl, title, out_svg: Path, out_csv: Path, n_clusters: int = 4):
    """Cluster rows and columns, write the heatmap and cluster assignments."""
    keep = np.isfinite(M).all(axis=1)
    M2 = M[keep]
    rl2 = [r for r, k in zip(rl, keep) if k]
    rows_out = []
    if M2.shape[0] >= 2:
        drow = ward_cluster(M2, ["/".join(map(str, r)) for r in rl2])
        ro = list(drow.leaf_order)
        rclust = drow.clusters(n_clusters)
    else:
        ro, rclust = list(range(M2.shape[0])), np.ones(M2.shape[0], dtype=int)
    co = list(ward_cluster(M2, axis=1).leaf_order) if M2.shape[0] >= 1 and M2.shape[1] >= 2 else list(range(M2.shape[1]))
    V = M2[np.ix_(ro, co)] if M2.size else M2
    row_labels = ["/".join(map(str, rl2[i])) for i in ro]
    col_labels = ["/".join(map(str, cl[j])) if isinstance(cl[j], tuple) else str(cl[j]) for j in co]
    out_svg.write_text(heatmap_svg(V, row_labels, col_labels, title))
    for pos, i in enumerate(ro):
        rows_out.append(("/".join(map(str, rl2[i])), pos, int(rclust[i])))
    write_rows(out_csv, ("feature", "leaf_position", "cluster"), rows_out)
    dropped = [r for r, k in zip(rl, keep) if not k]
    return len(row_labels), dropped


def emit_reports(
    out_dir,
    repro_results: Sequence,
    cindex_rows: Sequence[Mapping] = (),
    summary_rows: Sequence[Mapping] = (),
    wilcoxon_rows: Sequence[Mapping] = (),
) -> dict:
    """Write the analysis artifacts to ``out_dir``.

    Produces CCC tables and a clustered CCC heatmap (both ROIs joined as
    columns), per-ROI clustered C-index heatmaps, the global Pareto set
    and scatter, per-feature extractor fronts with raw and deduplicated
    counts, the thickness-pair Wilcoxon table and the top-10 model table.
    Returns ``{artifact name: path}``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    gen = [r for r in repro_results if r.kind == "generalized"]
    ccc_rows = [
        {"feature_family": r.feature_family, "feature_name": r.feature_name, "roi": r.roi, "extractor": r.extractor, "ccc": r.ccc}
        for r in gen
    ]
    p = out / "ccc_generalized.csv"
    write_rows(p, ("feature_family", "feature_name", "roi", "extractor", "ccc"), sorted(ccc_rows, key=lambda r: (r["feature_family"], r["feature_name"], r["roi"], r["extractor"])))
    files["ccc_generalized"] = p
    pair = [r for r in repro_results if r.kind.startswith("pairwise:")]
    p = out / "ccc_pairwise.csv"
    write_rows(
        p,
        ("feature_family", "feature_name", "roi", "extractor", "thickness_pair", "ccc"),
        sorted((r.feature_family, r.feature_name, r.roi, r.extractor, r.kind.split(":", 1)[1], r.ccc) for r in pair),
    )
    files["ccc_pairwise"] = p

    if ccc_rows:
        M, rl, cl = _matrix(ccc_rows, lambda r: (r["feature_family"], r["feature_name"]), lambda r: (r["roi"], r["extractor"]), "ccc")
        if M.shape[0] >= 2:
            n, dropped = _clustered_heatmap(M, rl, cl, "Generalized CCC (rows: features, columns: roi/extractor)", out / "ccc_heatmap.svg", out / "ccc_clusters.csv")
            files["ccc_heatmap"] = out / "ccc_heatmap.svg"
            files["ccc_clusters"] = out / "ccc_clusters.csv"

    if cindex_rows:
        p = out / "cindex_univariate.csv"
        cols = ("feature_family", "feature_name", "roi", "extractor", "cindex", "negated")
        write_rows(p, cols, sorted(cindex_rows, key=lambda r: (r["feature_family"], r["feature_name"], r["roi"], r["extractor"])))
        files["cindex_univariate"] = p
        for roi in sorted({r["roi"] for r in cindex_rows}):
            sub = [r for r in cindex_rows if r["roi"] == roi]
            M, rl, cl = _matrix(sub, lambda r: (r["feature_family"], r["feature_name"]), lambda r: r["extractor"], "cindex")
            if M.shape[0] >= 2:
                _clustered_heatmap(M, rl, cl, f"Univariate C-index, {roi}", out / f"cindex_heatmap_{roi}.svg", out / f"cindex_clusters_{roi}.csv")
                files[f"cindex_heatmap_{roi}"] = out / f"cindex_heatmap_{roi}.svg"

        ccc_map = {(r["feature_family"], r["feature_name"], r["roi"], r["extractor"]): r["ccc"] for r in ccc_rows}
        joined = []
        for r in cindex_rows:
            key = (r["feature_family"], r["feature_name"], r["roi"], r["extractor"])
            joined.append({**r, "ccc": ccc_map.get(key)})
        points = [
            ParetoPoint(f"{r['feature_family']}/{r['feature_name']}", r["roi"], r["extractor"], float(r["ccc"]), float(r["cindex"]))
            for r in joined
            if r["ccc"] is not None and np.isfinite(r["ccc"])
        ]
        if points:
            front = pareto_front(points)
            p = out / "pareto_front.csv"
            write_rows(p, ("feature", "roi", "extractor", "ccc", "cindex"), [(q.feature_id, q.roi, q.extractor, q.ccc, q.cindex) for q in front])
            files["pareto_front"] = p
            p = out / "pareto_scatter.svg"
            p.write_text(scatter_svg(points, front, "CCC vs univariate C-index"))
            files["pareto_scatter"] = p
        fr = per_feature_extractor_fronts(joined)
        p = out / "extractor_fronts.csv"
        write_rows(
            p,
            ("roi", "feature_family", "feature_name", "best_ccc", "best_cindex", "front"),
            [key + (";".join(sorted(fr.best_ccc[key])), ";".join(sorted(fr.best_cindex[key])), ";".join(sorted(fr.front[key]))) for key in sorted(fr.front)],
        )
        files["extractor_fronts"] = p
        p = out / "extractor_counts.csv"
        exs = sorted(fr.counts["front"])
        write_rows(
            p,
            ("extractor", "best_ccc", "best_cindex", "front", "best_ccc_dedup", "best_cindex_dedup", "front_dedup"),
            [
                (x, fr.counts["best_ccc"][x], fr.counts["best_cindex"][x], fr.counts["front"][x], fr.dedup_counts["best_ccc"][x], fr.dedup_counts["best_cindex"][x], fr.dedup_counts["front"][x])
                for x in exs
            ],
        )
        files["extractor_counts"] = p

    if wilcoxon_rows:
        p = out / "wilcoxon_thickness_pairs.csv"
        cols = ("extractor", "pair_a", "pair_b", "n", "median_ccc_a", "median_ccc_b", "statistic", "pvalue", "method")
        write_rows(p, cols, wilcoxon_rows)
        files["wilcoxon"] = p

    if summary_rows:
        from .survival.cv import SUMMARY_COLUMNS

        top = sorted(summary_rows, key=lambda r: (-r["mean_test_cindex"], r["extractor"], r["ccc_threshold"], r["n_features"]))[:10]
        p = out / "top_models.csv"
        write_rows(p, SUMMARY_COLUMNS, top)
        files["top_models"] = p
    return files
