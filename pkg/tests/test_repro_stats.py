import itertools

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radrepro.repro_stats import (
    DegenerateDataError,
    InsufficientDataError,
    UnbalancedDesignError,
    ccc_spectrum,
    generalized_ccc,
    pairwise_ccc,
    pearson,
    thickness_pair_wilcoxon,
    wilcoxon_signed_rank,
)

THICK = (2.5, 3.75, 5.0)


def simulate(rng, n, s2_s, s2_t, s2_a, s2_e, thickness=THICK, asir=(0, 10, 20, 30, 40, 50, 60)):
    """Long table from the random-subject model with fixed effects drawn at the given spreads."""
    T, A = len(thickness), len(asir)
    subj = rng.normal(0, np.sqrt(s2_s), n)
    # fixed effects with sample dispersion exactly equal to the target
    def effects(k, s2):
        if k == 1:
            return np.zeros(1)
        e = rng.normal(size=k)
        e -= e.mean()
        return e * np.sqrt(s2 * (k - 1) / (e @ e)) if s2 > 0 else np.zeros(k)
    t_eff, a_eff = effects(T, s2_t), effects(A, s2_a)
    cube = subj[:, None, None] + t_eff[None, :, None] + a_eff[None, None, :] + rng.normal(0, np.sqrt(s2_e), (n, T, A))
    s, t, a = np.meshgrid(np.arange(n), thickness, asir, indexing="ij")
    return s.ravel(), t.ravel().astype(float), a.ravel().astype(float), cube.ravel()


# --------------------------------------------------------------------------- pairwise CCC


def test_ccc_identity():
    x = np.array([1.0, 5.0, 2.0, 7.0])
    assert pairwise_ccc(x, x) == 1.0


def test_ccc_hand_value():
    assert pairwise_ccc([1, 2, 3], [2, 3, 4]) == pytest.approx(4 / 7, abs=1e-15)


@pytest.mark.parametrize("x, y, expected", [([3, 3, 3], [3, 3, 3], 1.0), ([3, 3, 3], [4, 4, 4], 0.0)])
def test_ccc_constant_series(x, y, expected):
    assert pairwise_ccc(x, y) == expected


def test_ccc_needs_three_pairs():
    with pytest.raises(InsufficientDataError):
        pairwise_ccc([1, 2], [1, 2])


def test_ccc_sample_moments():
    x, y = np.array([1.0, 2, 3, 5]), np.array([1.5, 2, 2.5, 6])
    sx, sy = x.var(ddof=1), y.var(ddof=1)
    cov = np.cov(x, y)[0, 1]
    assert pairwise_ccc(x, y, sample=True) == pytest.approx(2 * cov / (sx + sy + (x.mean() - y.mean()) ** 2))


series = arrays(np.float64, 12, elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(series, series, st.floats(0.01, 100), st.floats(-100, 100))
def test_ccc_properties(x, y, a, b):
    if np.ptp(x) < 1e-6 or np.ptp(y) < 1e-6:
        return
    c = pairwise_ccc(x, y)
    assert -1 <= c <= 1
    assert pairwise_ccc(y, x) == pytest.approx(c, abs=1e-12)
    assert abs(c) <= abs(pearson(x, y)) + 1e-12
    assert pairwise_ccc(a * x + b, a * y + b) == pytest.approx(c, abs=1e-12)


def test_ccc_symmetry_seeded(rng):
    for _ in range(50):
        x, y = rng.normal(size=20), rng.normal(size=20)
        assert pairwise_ccc(x, y) == pairwise_ccc(y, x)


# --------------------------------------------------------------------------- generalized CCC


def test_generalized_perfect_reproducibility():
    s, t, a, _ = simulate(np.random.default_rng(0), 10, 1, 0, 0, 0)
    v = s.astype(float) * 3.0
    comps = generalized_ccc(s, t, a, v)
    assert comps.sigma2_t == 0 and comps.sigma2_e == pytest.approx(0, abs=1e-24)
    assert comps.ccc == pytest.approx(1.0)


def test_generalized_monte_carlo_planted_components():
    rng = np.random.default_rng(2024)
    comps = generalized_ccc(*simulate(rng, 5000, 1.0, 0.25, 0.0, 0.25))
    assert comps.ccc == pytest.approx(1.0 / 1.5, abs=0.02)
    assert comps.sigma2_t == pytest.approx(0.25, abs=0.01)


def test_generalized_converges_to_icc():
    comps = generalized_ccc(*simulate(np.random.default_rng(5), 5000, 1.0, 0.0, 0.0, 0.5))
    assert comps.ccc == pytest.approx(1.0 / 1.5, abs=0.02)


def test_generalized_reports_asir_outside_ratio():
    comps = generalized_ccc(*simulate(np.random.default_rng(9), 2000, 1.0, 0.0, 4.0, 0.1))
    assert comps.sigma2_a == pytest.approx(4.0, rel=0.05)
    assert comps.ccc == pytest.approx(1.0 / 1.1, abs=0.02)


def test_generalized_matches_pairwise_two_levels():
    rng = np.random.default_rng(17)
    s, t, a, v = simulate(rng, 500, 1.0, 0.0, 0.0, 0.3, thickness=(2.5, 5.0), asir=(20,))
    g = generalized_ccc(s, t, None, v).ccc
    cube = v.reshape(500, 2)
    assert g == pytest.approx(pairwise_ccc(cube[:, 0], cube[:, 1]), abs=0.05)


def test_unbalanced_design_rejected():
    s, t, a, v = simulate(np.random.default_rng(1), 5, 1, 0.1, 0, 0.1)
    with pytest.raises(UnbalancedDesignError):
        generalized_ccc(s[1:], t[1:], a[1:], v[1:])


def test_zero_variance_degenerate():
    s, t, a, _ = simulate(np.random.default_rng(1), 5, 1, 0, 0, 0)
    with pytest.raises(DegenerateDataError):
        generalized_ccc(s, t, a, np.full(s.size, 2.0))


def test_negative_estimate_clamped_and_flagged():
    # thickness means identical, noise large: the moment estimate of sigma2_t is negative
    rng = np.random.default_rng(3)
    n = 6
    base = rng.normal(size=(n, 1))
    noise = rng.normal(size=(n, 2))
    noise -= noise.mean(axis=0)
    v = (base + noise).ravel()
    s = np.repeat(np.arange(n), 2)
    t = np.tile([2.5, 5.0], n)
    comps = generalized_ccc(s, t, None, v)
    assert comps.sigma2_t == 0.0 and "sigma2_t" in comps.clamped


# --------------------------------------------------------------------------- Wilcoxon


def test_wilcoxon_all_positive_exact():
    w = wilcoxon_signed_rank([1, 2, 3, 4, 5])
    assert w.pvalue == pytest.approx(1 / 16, abs=1e-15) and w.statistic == 15 and w.method == "exact"


def test_wilcoxon_enumeration_oracle(rng):
    d = np.round(rng.normal(size=9), 1)
    d = d[d != 0]
    ranks = np.argsort(np.argsort(np.abs(d))) + 1.0
    _, inv, cnt = np.unique(np.abs(d), return_inverse=True, return_counts=True)
    for u in range(cnt.size):
        ranks[inv == u] = ranks[inv == u].mean()
    t_obs = ranks[d > 0].sum()
    null = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product((0, 1), repeat=d.size)]
    null = np.array(null)
    p = min(1.0, 2 * min((null <= t_obs + 1e-9).mean(), (null >= t_obs - 1e-9).mean()))
    assert wilcoxon_signed_rank(d).pvalue == pytest.approx(p, abs=1e-12)


def test_wilcoxon_all_zero_flagged():
    w = wilcoxon_signed_rank([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert w.pvalue == 1.0 and w.all_zero


def test_wilcoxon_exact_vs_approx_at_boundary():
    rng = np.random.default_rng(100)
    for _ in range(20):
        d = rng.normal(0.2, 1, 25)
        assert abs(wilcoxon_signed_rank(d, method="exact").pvalue - wilcoxon_signed_rank(d, method="approx").pvalue) < 0.01


def test_wilcoxon_large_n_uses_approx(rng):
    assert wilcoxon_signed_rank(rng.normal(size=100)).method == "approx"


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.integers(-6, 6).map(float)))
def test_wilcoxon_sign_flip_symmetry(d):
    assert wilcoxon_signed_rank(d).pvalue == pytest.approx(wilcoxon_signed_rank(-d).pvalue, abs=1e-12)


# --------------------------------------------------------------------------- spectrum


def _table(rng, n=12):
    rows = []
    for sid in range(n):
        base = {"copied": rng.normal(), "noisy": rng.normal(), "biased": rng.normal(), "gappy": rng.normal()}
        for t in THICK:
            for a in (0.0, 20.0):
                vals = {
                    "copied": base["copied"],
                    "noisy": base["noisy"] + 0.3 * rng.normal(),
                    "biased": base["biased"] + 3.0 * t + 0.3 * rng.normal(),
                    "gappy": None if (sid == 0 and t == 5.0) else base["gappy"],
                }
                for name, v in vals.items():
                    for ext in ("L2", "S3"):
                        rows.append((f"S{sid:02d}", "tumor", t, a, ext, "firstorder", name, np.nan if v is None else v))
    return pd.DataFrame(rows, columns=["subject_id", "roi", "slice_thickness_mm", "asir_percent", "extractor", "feature_family", "feature_name", "value"])


def test_spectrum_bookkeeping_and_planted_order(rng):
    results, excluded = ccc_spectrum(_table(rng))
    gen = {(r.feature_name, r.extractor): r.ccc for r in results if r.kind == "generalized"}
    assert len(gen) == (4 - 1) * 1 * 2
    assert sorted(excluded) == [("firstorder", "gappy", "tumor", "L2"), ("firstorder", "gappy", "tumor", "S3")]
    for ext in ("L2", "S3"):
        assert gen[("copied", ext)] == pytest.approx(1.0)
        assert gen[("biased", ext)] < gen[("noisy", ext)]
    pairs = [r for r in results if r.kind.startswith("pairwise")]
    assert len(pairs) == 3 * 3 * 2
    assert {r.kind for r in pairs} == {"pairwise:2.5-3.75", "pairwise:2.5-5", "pairwise:3.75-5"}


def test_thickness_pair_wilcoxon_rows(rng):
    results, _ = ccc_spectrum(_table(rng))
    rows = thickness_pair_wilcoxon(results)
    assert len(rows) == 2 * 3
    assert all(0 < r["pvalue"] <= 1 for r in rows)
