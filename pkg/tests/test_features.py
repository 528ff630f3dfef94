import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import texture_oracle as oracle
from radrepro.features import (
    DIRECTIONS_2D,
    DIRECTIONS_3D,
    FEATURE_IDS,
    N_FEATURES,
    UndefinedFeatureWarning,
    aggregate_features,
    build_texture_matrix,
    extract,
    first_order_features,
)
from radrepro.features.firstorder import firstorder_from_values
from radrepro.features.matrices import glcm_matrix, glrlm_matrix
from radrepro.features.registry import FAMILIES, TEXTURE_FAMILIES
from radrepro.features.texture import glcm_features
from radrepro.preprocess import AGG_2_5D, AGG_3D, DiscretizedROI, discretize, get_setting
from radrepro.volume_io import ImageVolume, MaskVolume


def make_roi(levels):
    levels = np.asarray(levels, dtype=np.int32)
    return DiscretizedROI(levels, int(levels.max()), int((levels > 0).sum()), (0.0, 0.0, 0.0))


def random_levels(rng, max_shape=(6, 8, 8), max_ng=6):
    shape = tuple(int(v) for v in rng.integers(1, np.array(max_shape) + 1))
    ng = int(rng.integers(1, max_ng + 1))
    lv = rng.integers(1, ng + 1, size=shape) * (rng.random(shape) < rng.uniform(0.3, 1.0))
    if not lv.any():
        lv.flat[0] = 1
    lv[lv > 0] = np.unique(lv[lv > 0], return_inverse=True)[1] + 1  # levels 1..ng all present
    return lv.astype(np.int32)


def trim(m):
    m = np.asarray(m)
    cols = np.flatnonzero(m.any(axis=0))
    return m[:, : cols[-1] + 1] if cols.size else m[:, :0]


def close(a, b, rel=1e-10, abs_=1e-12):
    if a is None or b is None or (isinstance(b, float) and math.isnan(b)):
        return (a is None or math.isnan(a)) and (b is None or math.isnan(b))
    return abs(a - b) <= max(abs_, rel * max(abs(a), abs(b)))


# --------------------------------------------------------------------------- registry


def test_feature_counts():
    assert N_FEATURES == 93 and len(set(FEATURE_IDS)) == 93
    assert {f: len(n) for f, n in FAMILIES.items()} == {"firstorder": 18, "glcm": 24, "glrlm": 16, "glszm": 16, "gldm": 14, "ngtdm": 5}


def test_direction_sets():
    assert len(DIRECTIONS_3D) == 13 and len(DIRECTIONS_2D) == 4
    assert all(d[0] == 0 for d in DIRECTIONS_2D)
    negated = {tuple(-c for c in d) for d in DIRECTIONS_3D}
    assert not negated & set(DIRECTIONS_3D)


# --------------------------------------------------------------------------- matrices


def test_glcm_hand_example():
    m = build_texture_matrix(make_roi([[[1, 1], [1, 2]]]), "glcm", (0, 0, 1), "merged_slices").data
    np.testing.assert_array_equal(m, [[2, 1], [1, 0]])


def test_glrlm_hand_example():
    m = build_texture_matrix(make_roi([[[1, 1, 2]]]), "glrlm", (0, 0, 1), "merged_slices").data
    assert m[0, 1] == 1 and m[1, 0] == 1 and m.sum() == 2


def test_single_voxel_roi():
    roi = make_roi([[[1]]])
    assert build_texture_matrix(roi, "glcm", (0, 0, 1)).data.sum() == 0
    np.testing.assert_array_equal(build_texture_matrix(roi, "glszm").data, [[1]])
    np.testing.assert_array_equal(build_texture_matrix(roi, "ngtdm").data, [[1, 0]])


@pytest.mark.parametrize(
    "family, direction, scope",
    [("glcm", None, "volume"), ("glszm", (0, 0, 1), "volume"), ("glcm", (1, 0, 0), "merged_slices"), ("glcm", (0, 0, 1), "cube")],
    ids=["missing-direction", "non-directional", "out-of-plane", "bad-scope"],
)
def test_invalid_matrix_arguments(family, direction, scope):
    with pytest.raises(ValueError):
        build_texture_matrix(make_roi([[[1, 2]]]), family, direction, scope)


def test_single_slice_scope():
    lv = np.array([[[1, 1]], [[2, 2]]])
    m = build_texture_matrix(make_roi(lv), "glcm", (0, 0, 1), "single_slice", slice_id=1).data
    np.testing.assert_array_equal(m, [[0, 0], [0, 2]])


def _oracle_matrix(vox, ng, family, d, three_d):
    if family == "glcm":
        return np.array(oracle.glcm(vox, ng, d))
    if family == "glrlm":
        return oracle.as_matrix(oracle.glrlm_runs(vox, d), ng)
    if family == "glszm":
        return oracle.as_matrix(oracle.zones(vox, three_d), ng)
    if family == "gldm":
        return oracle.as_matrix(oracle.dependences(vox, three_d), ng)
    n, s = oracle.ngtdm(vox, ng, three_d)
    return np.column_stack([n, s])


def test_matrices_match_bruteforce_on_1000_rois():
    rng = np.random.default_rng(1000)
    for _ in range(1000):
        lv = random_levels(rng)
        roi, vox, ng = make_roi(lv), oracle.voxel_dict(lv), int(lv.max())
        for scope, three_d, dirs in (("volume", True, DIRECTIONS_3D), ("merged_slices", False, DIRECTIONS_2D)):
            for family in ("glcm", "glrlm"):
                for d in dirs:
                    got = build_texture_matrix(roi, family, d, scope).data
                    ref = _oracle_matrix(vox, ng, family, d, three_d)
                    if family == "glcm":
                        np.testing.assert_array_equal(got, ref)
                    else:
                        np.testing.assert_array_equal(trim(got), trim(ref))
            for family in ("glszm", "gldm"):
                got = build_texture_matrix(roi, family, None, scope).data
                np.testing.assert_array_equal(trim(got), trim(_oracle_matrix(vox, ng, family, None, three_d)))
            got = build_texture_matrix(roi, "ngtdm", None, scope).data
            ref = _oracle_matrix(vox, ng, "ngtdm", None, three_d)
            np.testing.assert_array_equal(got[:, 0], ref[:, 0])
            np.testing.assert_allclose(got[:, 1], ref[:, 1], rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_matrix_invariants(seed):
    lv = random_levels(np.random.default_rng(seed))
    roi = make_roi(lv)
    for d in DIRECTIONS_3D:
        m = build_texture_matrix(roi, "glcm", d).data
        np.testing.assert_array_equal(m, m.T)
        assert m.min() >= 0 and m.dtype.kind in "iu"
        runs = build_texture_matrix(roi, "glrlm", d).data
        assert (runs * np.arange(1, runs.shape[1] + 1)).sum() == roi.voxel_count
    zones = build_texture_matrix(roi, "glszm").data
    assert (zones * np.arange(1, zones.shape[1] + 1)).sum() == roi.voxel_count
    assert build_texture_matrix(roi, "gldm").data.sum() == roi.voxel_count


# --------------------------------------------------------------------------- features vs oracle


def test_features_match_bruteforce():
    rng = np.random.default_rng(7)
    for _ in range(60):
        shape = tuple(int(v) for v in rng.integers(1, [5, 7, 7]))
        img = rng.normal(size=shape) * 50
        m = rng.random(shape) < rng.uniform(0.3, 1.0)
        m.flat[0] = True
        roi = discretize(ImageVolume(img), MaskVolume(m), int(rng.integers(2, 7)))
        for agg in (AGG_3D, AGG_2_5D):
            ref = oracle.texture_features(roi.levels, roi.n_levels, agg == AGG_3D)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UndefinedFeatureWarning)
                for family in TEXTURE_FAMILIES:
                    for name, v in aggregate_features(roi, family, agg).items():
                        assert close(v, ref[(family, name)]), (family, name, agg, v, ref[(family, name)])


def test_random_6x6x4_roi_all_features():
    rng = np.random.default_rng(64)
    img = ImageVolume(rng.uniform(0, 300, (4, 6, 6)))
    mask = MaskVolume(np.ones((4, 6, 6), bool))
    roi = discretize(img, mask, 24)
    ref = oracle.texture_features(roi.levels, roi.n_levels, True)
    for family in TEXTURE_FAMILIES:
        for name, v in aggregate_features(roi, family, AGG_3D).items():
            assert close(v, ref[(family, name)]), (family, name)
    fo = first_order_features(img, mask, roi)
    ref_fo = oracle.firstorder_feats(list(img.values.ravel()), list(roi.levels.ravel()), img.voxel_volume)
    for name, v in fo.items():
        assert close(v, ref_fo[name]), name


def test_single_slice_25d_equals_3d_glcm():
    rng = np.random.default_rng(11)
    lv = random_levels(rng, (1, 8, 8))
    roi = make_roi(lv)
    assert aggregate_features(roi, "glcm", AGG_2_5D) == aggregate_features(roi, "glcm", AGG_3D)


def test_homogeneous_roi():
    roi = make_roi(np.ones((2, 3, 3), int))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedFeatureWarning)
        glcm = aggregate_features(roi, "glcm", AGG_3D)
        glrlm = aggregate_features(roi, "glrlm", AGG_3D)
    assert glcm["JointEntropy"] == 0.0
    ref = oracle.texture_features(roi.levels, 1, True)
    assert glrlm["RunPercentage"] == pytest.approx(ref[("glrlm", "RunPercentage")], rel=1e-12)


def test_undefined_feature_is_none_with_warning():
    roi = make_roi(np.ones((1, 2, 2), int))
    with pytest.warns(UndefinedFeatureWarning):
        values = aggregate_features(roi, "glcm", AGG_3D)
    assert values["Correlation"] is None
    assert all(v is None or math.isfinite(v) for v in values.values())


@pytest.mark.parametrize("k", [1, 2, 3])
def test_rotation_invariance_3d(rng, k):
    lv = random_levels(rng, (4, 6, 6), 5)
    rotated = np.ascontiguousarray(np.rot90(lv, k, axes=(1, 2)))
    a, b = make_roi(lv), make_roi(rotated)
    for family in ("glcm", "glrlm"):
        # the 13-direction set is closed under the rotation: matrices are permuted exactly
        ma = sorted(trim(build_texture_matrix(a, family, d).data).tobytes() for d in DIRECTIONS_3D)
        mb = sorted(trim(build_texture_matrix(b, family, d).data).tobytes() for d in DIRECTIONS_3D)
        assert ma == mb
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UndefinedFeatureWarning)
            assert aggregate_features(a, family, AGG_3D) == aggregate_features(b, family, AGG_3D)


def test_level_permutation():
    rng = np.random.default_rng(3)
    lv = random_levels(rng, (4, 6, 6), 5)
    ng = int(lv.max())
    perm = np.concatenate([[0], rng.permutation(np.arange(1, ng + 1))])
    while np.all(perm == np.arange(ng + 1)):
        perm = np.concatenate([[0], rng.permutation(np.arange(1, ng + 1))])
    a, b = make_roi(lv), make_roi(perm[lv])
    ga, gb = aggregate_features(a, "glcm", AGG_3D), aggregate_features(b, "glcm", AGG_3D)
    assert ga["JointEntropy"] == pytest.approx(gb["JointEntropy"], rel=1e-12)
    assert ga["JointAverage"] != pytest.approx(gb["JointAverage"], rel=1e-6)
    da, db = aggregate_features(a, "gldm", AGG_3D), aggregate_features(b, "gldm", AGG_3D)
    assert da["LowGrayLevelEmphasis"] != pytest.approx(db["LowGrayLevelEmphasis"], rel=1e-6)


def test_mcc_of_diagonal_matrix():
    # independent levels give a second eigenvalue of zero
    p = np.outer([1, 2, 3], [1, 2, 3]).astype(float)
    assert glcm_features(p)["MCC"] == pytest.approx(0.0, abs=1e-6)
    assert glcm_features(np.diag([2.0, 3.0, 5.0]))["MCC"] == pytest.approx(1.0)


# --------------------------------------------------------------------------- first order


def test_firstorder_constant_roi():
    img = ImageVolume(np.full((2, 2, 2), 100.0))
    mask = MaskVolume(np.ones((2, 2, 2), bool))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedFeatureWarning)
        fo = first_order_features(img, mask, discretize(img, mask))
    assert fo["Mean"] == fo["Median"] == fo["Minimum"] == fo["Maximum"] == 100.0
    assert fo["Variance"] == 0.0 and fo["Entropy"] == 0.0
    assert fo["Skewness"] is None and fo["Kurtosis"] is None


def test_firstorder_hand_values():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    fo = firstorder_from_values(x, np.array([1, 9, 17, 24]), 1.0)
    assert fo["Mean"] == 2.5 and fo["Variance"] == 1.25 and fo["Range"] == 3.0
    assert fo["Energy"] == 30.0 and fo["Uniformity"] == 0.25 and fo["Entropy"] == 2.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 350, allow_nan=False), min_size=1, max_size=80), st.floats(0.1, 10))
def test_firstorder_matches_reference(values, vv):
    x = np.array(values)
    levels, _ = oracle.discretize(values, 24)
    got = firstorder_from_values(x, np.array(levels), vv)
    ref = oracle.firstorder_feats(values, levels, vv)
    for name, v in got.items():
        assert close(v, ref[name], rel=1e-9, abs_=1e-9), name


# --------------------------------------------------------------------------- extraction


def _phantom(rng, spacing=(0.8, 0.8, 2.5)):
    shape = (6, 24, 24)
    z, y, x = np.indices(shape)
    inside = (((y - 12) / 9) ** 2 + ((x - 12) / 9) ** 2 + ((z - 2.5) / 2.6) ** 2) <= 1
    vals = np.where(inside, 100 + 30 * rng.normal(size=shape), -1000.0)
    return ImageVolume(vals, spacing), MaskVolume(inside, spacing)


def test_extract_returns_93_values(rng):
    img, mask = _phantom(rng)
    out = extract(img, {"tumor": mask}, get_setting("S3"))
    fv = out["tumor"]
    assert len(fv.values) == N_FEATURES and fv.extractor_name == "S3"
    assert all(v is None or math.isfinite(v) for v in fv.values.values())


def test_s2_s3_firstorder_identical(rng):
    img, mask = _phantom(rng)
    a = extract(img, {"tumor": mask}, get_setting("S2"))["tumor"]
    b = extract(img, {"tumor": mask}, get_setting("S3"))["tumor"]
    for name in FAMILIES["firstorder"]:
        assert a[("firstorder", name)] == b[("firstorder", name)]


def test_l2_equals_l2i_at_1mm(rng):
    img, mask = _phantom(rng, (1.0, 1.0, 1.0))
    a = extract(img, {"r": mask}, get_setting("L2"))["r"]
    b = extract(img, {"r": mask}, get_setting("L2i"))["r"]
    assert a.values == b.values


def test_empty_roi_recorded_others_unaffected(rng):
    img, mask = _phantom(rng)
    air = MaskVolume(img.values < -500, img.spacing)
    out = extract(img, {"air": air, "tumor": mask}, get_setting("S3"))
    assert type(out["air"]).__name__ == "ExtractionFailure"
    assert len(out["tumor"].values) == 93


def test_extraction_deterministic(rng):
    img, mask = _phantom(rng)
    cfg = get_setting("A2")
    assert extract(img, {"t": mask}, cfg)["t"].values == extract(img, {"t": mask}, cfg)["t"].values
