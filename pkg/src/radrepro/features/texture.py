"""Texture feature formulas and direction/slice aggregation.

Every formula function returns a dict of floats in which undefined values
(zero denominators, zero variance) are ``nan``; :func:`aggregate_features`
turns these into ``None`` at the public boundary.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from ..preprocess import AGG_2_5D, AGG_3D, DiscretizedROI
from . import registry
from .matrices import (
    DIRECTIONS_2D,
    DIRECTIONS_3D,
    glcm_matrix,
    gldm_matrix,
    glrlm_matrix,
    glszm_matrix,
    ngtdm_matrix,
)

__all__ = [
    "UndefinedFeatureWarning",
    "glcm_features",
    "glrlm_features",
    "glszm_features",
    "gldm_features",
    "ngtdm_features",
    "aggregate_features",
]

NAN = float("nan")


class UndefinedFeatureWarning(UserWarning):
    """A feature is undefined for this ROI (reported as missing)."""


def _div(num, den):
    return float(num / den) if den != 0 else NAN


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def glcm_features(P: np.ndarray) -> dict:
    """Features of one co-occurrence matrix (gray levels 1..Ng)."""
    ng = P.shape[0]
    p = P / P.sum()
    i = np.arange(1, ng + 1, dtype=np.float64)[:, None]
    j = i.T
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    lv = np.arange(1, ng + 1, dtype=np.float64)
    ux = float((lv * px).sum())
    uy = float((lv * py).sum())
    sx = np.sqrt(((lv - ux) ** 2 * px).sum())
    sy = np.sqrt(((lv - uy) ** 2 * py).sum())

    absdiff = np.abs(i - j).astype(np.int64)
    p_diff = np.bincount(absdiff.ravel(), weights=p.ravel(), minlength=ng)
    ksum = (i + j).astype(np.int64)
    p_sum = np.bincount(ksum.ravel(), weights=p.ravel(), minlength=2 * ng + 1)
    k_diff = np.arange(ng, dtype=np.float64)
    k_sum = np.arange(2 * ng + 1, dtype=np.float64)

    hx = _entropy(px)
    hy = _entropy(py)
    hxy = _entropy(p)
    pxpy = px[:, None] * py[None, :]
    nz = p > 0
    hxy1 = float(-(p[nz] * np.log2(pxpy[nz])).sum())
    hxy2 = _entropy(pxpy)

    da = float((k_diff * p_diff).sum())
    centred = i + j - ux - uy
    out = {
        "Autocorrelation": float((p * i * j).sum()),
        "JointAverage": ux,
        "ClusterProminence": float((centred**4 * p).sum()),
        "ClusterShade": float((centred**3 * p).sum()),
        "ClusterTendency": float((centred**2 * p).sum()),
        "Contrast": float(((i - j) ** 2 * p).sum()),
        "Correlation": _div(float((p * i * j).sum()) - ux * uy, sx * sy),
        "DifferenceAverage": da,
        "DifferenceEntropy": _entropy(p_diff),
        "DifferenceVariance": float(((k_diff - da) ** 2 * p_diff).sum()),
        "JointEnergy": float((p**2).sum()),
        "JointEntropy": hxy,
        "Imc1": _div(hxy - hxy1, max(hx, hy)),
        "Imc2": float(np.sqrt(1.0 - np.exp(-2.0 * max(hxy2 - hxy, 0.0)))),
        "Idm": float((p / (1.0 + (i - j) ** 2)).sum()),
        "MCC": _mcc(p, px, py),
        "Idmn": float((p / (1.0 + (i - j) ** 2 / ng**2)).sum()),
        "Id": float((p / (1.0 + np.abs(i - j))).sum()),
        "Idn": float((p / (1.0 + np.abs(i - j) / ng)).sum()),
        "InverseVariance": float((p_diff[1:] / k_diff[1:] ** 2).sum()),
        "MaximumProbability": float(p.max()),
        "SumAverage": float((k_sum * p_sum).sum()),
        "SumEntropy": _entropy(p_sum),
        "SumSquares": float(((i - ux) ** 2 * p).sum()),
    }
    return out


def _mcc(p, px, py):
    rows = px > 0
    cols = py > 0
    if rows.sum() < 2:
        return NAN
    b = p[np.ix_(rows, cols)] / np.sqrt(px[rows])[:, None] / np.sqrt(py[cols])[None, :]
    eig = np.linalg.eigvalsh(b @ b.T)
    # the largest eigenvalue is 1; anything below rounding level is zero
    return float(np.sqrt(eig[-2])) if eig[-2] > 1e-13 else 0.0


def _size_features(P: np.ndarray, n_voxels: int, names) -> dict:
    """Shared formulas of run-length, size-zone and dependence matrices."""
    ng, nj = P.shape
    total = P.sum()
    pn = P / total
    i = np.arange(1, ng + 1, dtype=np.float64)[:, None]
    j = np.arange(1, nj + 1, dtype=np.float64)[None, :]
    pg = P.sum(axis=1)
    pr = P.sum(axis=0)
    mu_i = float((pn * i).sum())
    mu_j = float((pn * j).sum())
    values = {
        "short": float((pn / j**2).sum()),
        "long": float((pn * j**2).sum()),
        "gln": float((pg**2).sum() / total),
        "glnn": float((pg**2).sum() / total**2),
        "sn": float((pr**2).sum() / total),
        "snn": float((pr**2).sum() / total**2),
        "pct": float(total / n_voxels),
        "glv": float((pn * (i - mu_i) ** 2).sum()),
        "sv": float((pn * (j - mu_j) ** 2).sum()),
        "ent": _entropy(pn),
        "lgl": float((pn / i**2).sum()),
        "hgl": float((pn * i**2).sum()),
        "slgl": float((pn / (i**2 * j**2)).sum()),
        "shgl": float((pn * i**2 / j**2).sum()),
        "llgl": float((pn * j**2 / i**2).sum()),
        "lhgl": float((pn * i**2 * j**2).sum()),
    }
    return {name: values[key] for key, name in names}


_GLRLM_KEYS = list(
    zip(
        ["short", "long", "gln", "glnn", "sn", "snn", "pct", "glv", "sv", "ent", "lgl", "hgl", "slgl", "shgl", "llgl", "lhgl"],
        registry.GLRLM,
    )
)
_GLSZM_KEYS = list(zip([k for k, _ in _GLRLM_KEYS], registry.GLSZM))
_GLDM_KEYS = list(
    zip(
        ["short", "long", "gln", "sn", "snn", "glv", "sv", "ent", "lgl", "hgl", "slgl", "shgl", "llgl", "lhgl"],
        registry.GLDM,
    )
)


def glrlm_features(P: np.ndarray, n_voxels: int) -> dict:
    return _size_features(P, n_voxels, _GLRLM_KEYS)


def glszm_features(P: np.ndarray, n_voxels: int) -> dict:
    return _size_features(P, n_voxels, _GLSZM_KEYS)


def gldm_features(P: np.ndarray) -> dict:
    return _size_features(P, int(P.sum()), _GLDM_KEYS)


def ngtdm_features(table: np.ndarray) -> dict:
    """Features of an NGTDM table with columns ``(n_i, s_i)``."""
    n, s = table[:, 0], table[:, 1]
    nvp = n.sum()
    present = n > 0
    lv = np.arange(1, len(n) + 1, dtype=np.float64)[present]
    p = n[present] / nvp
    s = s[present]
    ngp = int(present.sum())
    ps = p * s
    sum_ps = ps.sum()
    di = lv[:, None] - lv[None, :]
    contrast_den = ngp * (ngp - 1)
    contrast = NAN
    if contrast_den:
        contrast = float((p[:, None] * p[None, :] * di**2).sum() / contrast_den * s.sum() / nvp)
    busy_den = np.abs((lv * p)[:, None] - (lv * p)[None, :]).sum()
    complexity = (np.abs(di) * (ps[:, None] + ps[None, :]) / (p[:, None] + p[None, :])).sum() / nvp
    strength_num = ((p[:, None] + p[None, :]) * di**2).sum()
    return {
        "Coarseness": _div(1.0, sum_ps),
        "Contrast": contrast,
        "Busyness": _div(sum_ps, busy_den),
        "Complexity": float(complexity),
        "Strength": _div(strength_num, s.sum()),
    }


# --------------------------------------------------------------------------- aggregation


def _mean_over(per_direction, names):
    out = {}
    for name in names:
        vals = np.array([d[name] for d in per_direction], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        # exactly rounded, so the result does not depend on direction order
        out[name] = math.fsum(vals) / vals.size if vals.size else NAN
    return out


def aggregate_features(roi: DiscretizedROI, family: str, aggregation: str) -> dict:
    """Compute one texture family for ``roi`` under 2.5D or 3D aggregation.

    Directional families (GLCM, GLRLM) average per-direction features over
    13 directions (3D) or the 4 in-plane directions with slices merged
    (2.5D); directions with an empty matrix are skipped. Non-directional
    families use one matrix, volumetric (3D) or slice-merged (2.5D).
    Undefined values are returned as ``None``.
    """
    family = family.lower()
    if aggregation not in (AGG_2_5D, AGG_3D):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    three_d = aggregation == AGG_3D
    grid = roi.cropped(pad=1)
    ng = roi.n_levels
    nvox = roi.voxel_count

    if family == "glcm":
        per_dir = []
        for d in DIRECTIONS_3D if three_d else DIRECTIONS_2D:
            P = glcm_matrix(grid, ng, d)
            if P.sum() > 0:
                per_dir.append(glcm_features(P))
        values = _mean_over(per_dir, registry.GLCM) if per_dir else dict.fromkeys(registry.GLCM, NAN)
    elif family == "glrlm":
        per_dir = [glrlm_features(glrlm_matrix(grid, ng, d), nvox) for d in (DIRECTIONS_3D if three_d else DIRECTIONS_2D)]
        values = _mean_over(per_dir, registry.GLRLM)
    elif family == "glszm":
        values = glszm_features(glszm_matrix(grid, ng, three_d), nvox)
    elif family == "gldm":
        values = gldm_features(gldm_matrix(grid, ng, three_d))
    elif family == "ngtdm":
        values = ngtdm_features(ngtdm_matrix(grid, ng, three_d))
    else:
        raise ValueError(f"unknown texture family {family!r}")
    return _finalise(family, values)


def _finalise(family, values):
    out = {}
    undefined = []
    for name, v in values.items():
        if v is None or not np.isfinite(v):
            out[name] = None
            undefined.append(name)
        else:
            out[name] = float(v)
    if undefined:
        warnings.warn(f"{family}: undefined feature(s) {', '.join(undefined)}", UndefinedFeatureWarning, stacklevel=3)
    return out
