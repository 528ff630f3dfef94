import dataclasses
import json

import numpy as np
import pandas as pd
import pytest

from radrepro.features import extract
from radrepro.pipeline import synth_feature_table
from radrepro.preprocess import get_setting
from radrepro.repro_stats import ccc_spectrum
from radrepro.survival import NoComparablePairsError, harrell_cindex
from radrepro.synth import (
    SynthSpec,
    SynthSpecError,
    generate_fine,
    generate_outcomes,
    generate_subject,
    load_synth_spec,
    subject_params,
    write_cohort,
)
from radrepro.volume_io import load_manifest

SMALL = SynthSpec(n_subjects=3, asir_levels=(0, 20))


def spec(**kw):
    return dataclasses.replace(SMALL, **kw)


def params(s):
    return [subject_params(s, i) for i in range(s.n_subjects)]


# --------------------------------------------------------------------------- spec


@pytest.mark.parametrize(
    "kw",
    [dict(n_subjects=1), dict(thickness_levels=(2.0,)), dict(tumor_radii_mm=(16, 16, 12)), dict(grid_xy=20), dict(asir_levels=(-10,)), dict(hazard_param="size")],
    ids=["one-subject", "not-multiple", "tumor-too-big", "grid-too-small", "negative-asir", "bad-hazard-param"],
)
def test_invalid_spec(kw):
    with pytest.raises(SynthSpecError):
        spec(**kw)


def test_group_sizes():
    s = SynthSpec()
    assert [s.group_size(t) for t in s.thickness_levels] == [4, 6, 8]
    assert len(s.reconstructions) == 21


def test_load_spec_json(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"n_subjects": 4, "thickness_levels": [2.5, 5.0]}))
    s = load_synth_spec(p)
    assert s.n_subjects == 4 and s.thickness_levels == (2.5, 5.0)
    p.write_text(json.dumps({"n_subject": 4}))
    with pytest.raises(SynthSpecError, match="unknown"):
        load_synth_spec(p)
    p.write_text(SynthSpec().to_json())
    assert load_synth_spec(p) == SynthSpec()


# --------------------------------------------------------------------------- volumes


def test_thick_slices_are_exact_fine_means():
    fine = generate_fine(SMALL, 0)
    recons = generate_subject(SMALL, 0, fine)
    img = recons[(5.0, 0.0)][0]
    assert img.dims == (48, 48, 6) and img.spacing == (0.8, 0.8, 5.0)
    expected = fine.values.reshape(6, 8, 48, 48).mean(axis=1)
    assert np.array_equal(img.values, expected)
    for k in range(6):
        assert np.array_equal(img.values[k], np.mean(fine.values[8 * k : 8 * k + 8], axis=0))
    assert recons[(2.5, 0.0)][0].dims[2] == 12 and recons[(3.75, 0.0)][0].dims[2] == 8


def test_masks_share_image_geometry():
    for (t, a), (img, masks) in generate_subject(SMALL, 1).items():
        for m in masks.values():
            assert img.same_geometry(m) and m.count > 0
        assert not (masks["tumor"].values & masks["liver"].values).any()


def test_asir_smooths_in_plane_only():
    r = generate_subject(SMALL, 0)
    a0, a20 = r[(5.0, 0.0)][0].values, r[(5.0, 20.0)][0].values
    assert a20.std() < a0.std()
    np.testing.assert_allclose(a20.mean(axis=(1, 2)), a0.mean(axis=(1, 2)), rtol=1e-9)


def test_homogeneous_subject_constant():
    s = spec(tumor_contrast=(0, 0), liver_contrast=(0, 0), noise_hu=0, background_hu=100, liver_hu=100, tumor_hu=100)
    for (t, a), (img, _) in generate_subject(s, 0).items():
        assert np.ptp(img.values) == 0


def test_offset_shifts_location_features():
    base = spec(tumor_contrast=(10, 20), noise_hu=5)
    shifted = dataclasses.replace(base, offset_hu=32.0)
    cfg = get_setting("S3")
    for t in (2.5, 5.0):
        a = generate_subject(base, 0)[(t, 0.0)]
        b = generate_subject(shifted, 0)[(t, 0.0)]
        fa = extract(a[0], {"tumor": a[1]["tumor"]}, cfg)["tumor"]
        fb = extract(b[0], {"tumor": b[1]["tumor"]}, cfg)["tumor"]
        for name in ("Mean", "Median", "Minimum", "Maximum", "10Percentile", "90Percentile"):
            assert fb[("firstorder", name)] - fa[("firstorder", name)] == pytest.approx(32.0, abs=1e-9)
        for name in ("Variance", "Range", "InterquartileRange"):
            assert fb[("firstorder", name)] == pytest.approx(fa[("firstorder", name)], rel=1e-9)


def test_seed_determinism():
    a, b = generate_subject(SMALL, 2), generate_subject(SMALL, 2)
    assert all(np.array_equal(a[k][0].values, b[k][0].values) for k in a)
    c = generate_subject(spec(rng_seed=1), 2)
    assert not np.array_equal(a[(5.0, 0.0)][0].values, c[(5.0, 0.0)][0].values)


def test_write_cohort_thread_count_independent(tmp_path):
    s = spec(n_subjects=2, thickness_levels=(5.0,), asir_levels=(20,))
    m1 = write_cohort(s, tmp_path / "one", workers=1)
    m2 = write_cohort(s, tmp_path / "two", workers=2)
    files1 = sorted(p.relative_to(tmp_path / "one") for p in (tmp_path / "one").rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(tmp_path / "two") for p in (tmp_path / "two").rglob("*") if p.is_file())
    assert files1 == files2
    for rel in files1:
        if rel.name != "manifest.csv":
            assert (tmp_path / "one" / rel).read_bytes() == (tmp_path / "two" / rel).read_bytes()
    e1, e2 = load_manifest(m1), load_manifest(m2)
    assert [(e.subject_id, e.roi, e.time_days, e.event) for e in e1] == [(e.subject_id, e.roi, e.time_days, e.event) for e in e2]
    assert e1.is_survival and len(e1) == 4


def test_contrast_ranks_variance_across_thicknesses():
    s = SynthSpec(n_subjects=8, asir_levels=(0,))
    ps = params(s)
    lo = min(range(8), key=lambda i: ps[i].tumor_contrast)
    hi = max(range(8), key=lambda i: ps[i].tumor_contrast)
    cfg = get_setting("L2")
    for t in s.thickness_levels:
        var = {}
        for i in (lo, hi):
            img, masks = generate_subject(s, i)[(t, 0.0)]
            var[i] = extract(img, {"tumor": masks["tumor"]}, cfg)["tumor"][("firstorder", "Variance")]
        assert var[hi] > var[lo]


def test_thickness_biased_feature_less_reproducible():
    s = SynthSpec(n_subjects=8, asir_levels=(0, 20))
    table = synth_feature_table(s, [get_setting("L2")])
    sub = table[(table["feature_family"] == "firstorder") & (table["feature_name"] == "Mean") & (table["roi"] == "liver")].copy()
    biased = sub.copy()
    biased["feature_name"] = "MeanBiased"
    biased["value"] += 3.0 * sub["value"].std() * biased["slice_thickness_mm"]
    res, _ = ccc_spectrum(pd.concat([sub, biased]), pairwise=False)
    ccc = {r.feature_name: r.ccc for r in res}
    assert ccc["MeanBiased"] < ccc["Mean"]


# --------------------------------------------------------------------------- outcomes


def test_null_hazard_cindex_near_half():
    s = SynthSpec(n_subjects=400, rng_seed=5)
    out = generate_outcomes(s, params(s))
    t = np.array([o.time for o in out])
    e = np.array([o.event for o in out])
    x = np.random.default_rng(0).normal(size=400)
    assert abs(harrell_cindex(x, t, e) - 0.5) <= 0.05


def test_planted_hazard_contrast_concordant():
    s = SynthSpec(n_subjects=400, hazard_beta=3.0, rng_seed=5)
    ps = params(s)
    out = generate_outcomes(s, ps)
    c = harrell_cindex([p.tumor_contrast for p in ps], [o.time for o in out], [o.event for o in out])
    assert c > 0.8


@pytest.mark.parametrize("target", [0.3, 0.4, 0.5])
def test_censoring_fraction(target):
    s = SynthSpec(n_subjects=2000, hazard_beta=1.0, censoring_fraction=target, rng_seed=3)
    out = generate_outcomes(s, params(s))
    frac = 1 - np.mean([o.event for o in out])
    assert abs(frac - target) < 0.04
    assert all(o.time > 0 for o in out)


def test_all_censored_no_comparable_pairs():
    s = SynthSpec(n_subjects=20, censor_all_at=365.0)
    out = generate_outcomes(s, params(s))
    assert not any(o.event for o in out)
    with pytest.raises(NoComparablePairsError):
        harrell_cindex(np.arange(20.0), [o.time for o in out], [o.event for o in out])


def test_outcomes_deterministic():
    s = SynthSpec(n_subjects=30, hazard_beta=1.0)
    assert generate_outcomes(s, params(s)) == generate_outcomes(s, params(s))
