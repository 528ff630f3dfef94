import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radrepro.analysis import (
    ParetoPoint,
    dominates,
    emit_reports,
    pareto_front,
    per_feature_extractor_fronts,
    scatter_svg,
    ward_cluster,
)
from radrepro.repro_stats import ReproResult


def brute_ward_heights(X):
    """Naive Ward: merge the pair with the smallest SSE increase, height sqrt(2 * increase)."""
    clusters = [[i] for i in range(len(X))]
    heights = []
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                A, B = X[clusters[a]], X[clusters[b]]
                inc = len(A) * len(B) / (len(A) + len(B)) * np.sum((A.mean(0) - B.mean(0)) ** 2)
                if best is None or inc < best[0]:
                    best = (inc, a, b)
        inc, a, b = best
        heights.append(np.sqrt(2 * inc))
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    return np.array(heights)


# --------------------------------------------------------------------------- Ward


def test_ward_1d_example():
    d = ward_cluster(np.array([[0.0], [1.0], [10.0], [11.0]]), ["a", "b", "c", "d"])
    first_two = {frozenset(m[:2]) for m in d.merges[:2]}
    assert first_two == {frozenset((0, 1)), frozenset((2, 3))}
    assert d.merges[2][3] == 4
    assert d.heights[:2] == pytest.approx([1.0, 1.0])


def test_identical_rows_merge_first(rng):
    X = rng.normal(size=(6, 3))
    X[4] = X[1]
    d = ward_cluster(X)
    assert set(d.merges[0][:2]) == {1, 4} and d.merges[0][2] == 0.0


def test_all_identical_rows():
    d = ward_cluster(np.ones((5, 2)))
    assert np.all(d.heights == 0) and len(d.merges) == 4


def test_heights_match_naive_ward(rng):
    X = rng.normal(size=(12, 4))
    np.testing.assert_allclose(ward_cluster(X).heights, brute_ward_heights(X), rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 30))
def test_ward_invariants(seed, n):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, 3))
    d = ward_cluster(X)
    assert len(d.merges) == n - 1 and sorted(d.leaf_order) == list(range(n))
    assert np.all(np.diff(d.heights) >= -1e-12)
    perm = g.permutation(n)
    np.testing.assert_allclose(np.sort(ward_cluster(X[perm]).heights), np.sort(d.heights), rtol=1e-10, atol=1e-12)


def test_ward_columns_and_missing_rows(rng):
    X = rng.normal(size=(5, 7))
    X[2, 3] = np.nan
    d = ward_cluster(X, list("abcde"))
    assert d.dropped == ("c",) and d.n_leaves == 4
    assert ward_cluster(rng.normal(size=(3, 6)), axis=1).n_leaves == 6
    with pytest.raises(ValueError):
        ward_cluster(np.ones((1, 3)))


def test_clusters_cut(rng):
    X = np.vstack([rng.normal(0, 0.1, (5, 2)), rng.normal(10, 0.1, (5, 2))])
    labels = ward_cluster(X).clusters(2)
    assert len(set(labels[:5])) == 1 and len(set(labels[5:])) == 1 and labels[0] != labels[5]


# --------------------------------------------------------------------------- Pareto


def P(ccc, c, fid="f", ex="L2"):
    return ParetoPoint(fid, "tumor", ex, ccc, c)


def brute_front(points):
    return [p for p in points if not any(dominates(q, p) for q in points)]


def test_pareto_single_point():
    assert pareto_front([P(0.5, 0.6)]) == [P(0.5, 0.6)]


def test_pareto_hand_example():
    a, b, c = P(0.9, 0.55, "a"), P(0.8, 0.60, "b"), P(0.85, 0.50, "c")
    assert pareto_front([c, b, a]) == [a, b]
    assert dominates(a, c)


def test_pareto_duplicates_kept():
    pts = [P(0.9, 0.6, "a"), P(0.9, 0.6, "b"), P(0.8, 0.55, "c")]
    assert [p.feature_id for p in pareto_front(pts)] == ["a", "b"]


def test_pareto_matches_bruteforce_10000():
    g = np.random.default_rng(10000)
    # coarse grid so that ties in either coordinate are common
    ccc = np.round(g.uniform(0, 1, 10000), 2)
    cidx = np.round(0.5 + 0.5 * g.beta(2, 5, 10000), 2)
    pts = [P(float(a), float(b), f"f{i}") for i, (a, b) in enumerate(zip(ccc, cidx))]
    front = pareto_front(pts)
    # brute force restricted to candidates by the O(n^2) rule over all points
    ref = {p.feature_id for p in pts if not any(dominates(q, p) for q in pts if q.ccc >= p.ccc and q.cindex >= p.cindex)}
    assert {p.feature_id for p in front} == ref
    assert [p.ccc for p in front] == sorted((p.ccc for p in front), reverse=True)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), min_size=1, max_size=40))
def test_pareto_properties(coords):
    pts = [P(a / 8, 0.5 + b / 16, f"f{i}") for i, (a, b) in enumerate(coords)]
    front = pareto_front(pts)
    assert set(front) == set(brute_front(pts))
    assert pareto_front(front) == front
    for p in set(pts) - set(front):
        assert any(dominates(q, p) for q in front)  # witness on the front


def test_pareto_rejects_nonfinite():
    with pytest.raises(ValueError):
        P(float("nan"), 0.5)


# --------------------------------------------------------------------------- extractor fronts


def fronts_rows(g, n_feat=30, extractors=("A2", "L2", "S3")):
    rows = []
    for k in range(n_feat):
        for x in extractors:
            rows.append(
                {"feature_family": "glcm", "feature_name": f"F{k}", "roi": "liver" if k % 2 else "tumor", "extractor": x,
                 "ccc": float(np.round(g.uniform(0.5, 1), 1)), "cindex": float(np.round(g.uniform(0.5, 0.7), 2))}
            )
    return rows


def test_single_extractor_wins_both():
    rows = [
        {"feature_family": "gldm", "feature_name": "X", "roi": "tumor", "extractor": x, "ccc": c, "cindex": i}
        for x, c, i in (("L2", 0.95, 0.62), ("S3", 0.90, 0.60), ("A3", 0.80, 0.55))
    ]
    fr = per_feature_extractor_fronts(rows)
    assert fr.front[("tumor", "gldm", "X")] == {"L2"}


def test_split_winners_both_on_front():
    rows = [
        {"feature_family": "gldm", "feature_name": "X", "roi": "tumor", "extractor": x, "ccc": c, "cindex": i}
        for x, c, i in (("L2", 0.95, 0.58), ("S3", 0.90, 0.63), ("A3", 0.80, 0.55))
    ]
    fr = per_feature_extractor_fronts(rows)
    key = ("tumor", "gldm", "X")
    assert fr.best_ccc[key] == {"L2"} and fr.best_cindex[key] == {"S3"} and fr.front[key] == {"L2", "S3"}


def test_extractor_counts_match_recount():
    g = np.random.default_rng(4)
    rows = fronts_rows(g)
    rows.append({"feature_family": "glcm", "feature_name": "F0", "roi": "tumor", "extractor": "L3", "ccc": None, "cindex": 0.6})
    fr = per_feature_extractor_fronts(rows)
    assert fr.excluded == (("tumor", "glcm", "F0", "L3"),)
    feats = {}
    for r in rows:
        if r["ccc"] is not None:
            feats.setdefault((r["roi"], r["feature_family"], r["feature_name"]), []).append(r)
    counts = {k: {x: 0 for x in ("A2", "L2", "S3")} for k in ("best_ccc", "best_cindex", "front")}
    for rs in feats.values():
        mc, mi = max(r["ccc"] for r in rs), max(r["cindex"] for r in rs)
        for r in rs:
            counts["best_ccc"][r["extractor"]] += r["ccc"] == mc
            counts["best_cindex"][r["extractor"]] += r["cindex"] == mi
            dominated = any(
                q["ccc"] >= r["ccc"] and q["cindex"] >= r["cindex"] and (q["ccc"] > r["ccc"] or q["cindex"] > r["cindex"]) for q in rs
            )
            counts["front"][r["extractor"]] += not dominated
    assert fr.counts == counts


def test_dedup_counts_split_equal_features():
    rows = []
    for name in ("Same1", "Same2"):
        for x, c, i in (("L2", 0.9, 0.6), ("S3", 0.8, 0.7)):
            rows.append({"feature_family": "firstorder", "feature_name": name, "roi": "tumor", "extractor": x, "ccc": c, "cindex": i})
    fr = per_feature_extractor_fronts(rows)
    assert fr.counts["front"] == {"L2": 2, "S3": 2}
    assert fr.dedup_counts["front"] == {"L2": 1.0, "S3": 1.0}


# --------------------------------------------------------------------------- reports


def report_inputs(g):
    repro, cidx = [], []
    for k in range(8):
        for roi in ("liver", "tumor"):
            for x in ("L2", "S3"):
                c = float(g.uniform(0.3, 1))
                repro.append(ReproResult("glcm", f"F{k}", roi, x, c, "generalized"))
                repro.append(ReproResult("glcm", f"F{k}", roi, x, float(g.uniform(0, 1)), "pairwise:2.5-5"))
                cidx.append({"feature_family": "glcm", "feature_name": f"F{k}", "roi": roi, "extractor": x, "cindex": float(g.uniform(0.5, 0.7)), "negated": False})
    summary = [
        {"extractor": x, "ccc_threshold": t, "n_features": n, "mean_test_cindex": float(g.uniform(0.5, 0.7)), "ci_lo": 0.5, "ci_hi": 0.7, "mean_train_cindex": 0.7, "liver_fraction": 0.5}
        for x in ("L2", "S3") for t in (0.0, 0.85) for n in (1, 2, 4, 8)
    ]
    return repro, cidx, summary


def test_emit_reports_deterministic(tmp_path):
    inputs = report_inputs(np.random.default_rng(8))
    a = emit_reports(tmp_path / "a", *inputs)
    b = emit_reports(tmp_path / "b", *inputs)
    assert sorted(a) == sorted(b)
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes(), name
    for name in ("ccc_generalized", "ccc_heatmap", "pareto_front", "pareto_scatter", "extractor_counts", "top_models", "cindex_heatmap_liver"):
        assert name in a


def test_heatmap_rows_and_leaf_order(tmp_path):
    repro, cidx, summary = report_inputs(np.random.default_rng(9))
    files = emit_reports(tmp_path, repro, cidx, summary)
    svg = files["ccc_heatmap"].read_text()
    assert len(re.findall(r'class="cell"', svg)) == 8 * 4
    clusters = files["ccc_clusters"].read_text().splitlines()[1:]
    assert len(clusters) == 8
    assert [int(l.split(",")[1]) for l in clusters] == list(range(8))
    top = files["top_models"].read_text().splitlines()
    assert len(top) == 11


def test_scatter_marks_front(tmp_path):
    repro, cidx, summary = report_inputs(np.random.default_rng(10))
    files = emit_reports(tmp_path, repro, cidx, summary)
    front_rows = files["pareto_front"].read_text().splitlines()[1:]
    svg = files["pareto_scatter"].read_text()
    assert len(re.findall(r'class="front"', svg)) == len(front_rows)
    assert len(re.findall(r'class="(front|point)"', svg)) == len(cidx)


def test_scatter_svg_counts():
    pts = [P(0.9, 0.6, "a"), P(0.5, 0.55, "b"), P(0.95, 0.52, "c")]
    svg = scatter_svg(pts, pareto_front(pts))
    assert svg.count('class="front"') == 2 and svg.count('class="point"') == 1
