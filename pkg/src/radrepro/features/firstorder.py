"""First-order (intensity histogram) features."""
from __future__ import annotations

import numpy as np

from ..preprocess import DiscretizedROI
from ..volume_io import ImageVolume, MaskVolume
from .texture import NAN, _finalise


def firstorder_from_values(x: np.ndarray, levels: np.ndarray, voxel_volume: float) -> dict:
    """First-order features of raw ROI values ``x`` and their gray ``levels``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    mean = x.mean()
    dev = x - mean
    m2 = float((dev**2).mean())
    constant = x.max() == x.min()
    p10, p25, p75, p90 = np.percentile(x, [10, 25, 75, 90])
    robust = x[(x >= p10) & (x <= p90)]
    energy = float((x**2).sum())
    counts = np.bincount(levels)
    prob = counts[counts > 0] / n
    return {
        "Energy": energy,
        "TotalEnergy": energy * voxel_volume,
        "Entropy": float(-(prob * np.log2(prob)).sum()),
        "Minimum": float(x.min()),
        "10Percentile": float(p10),
        "90Percentile": float(p90),
        "Maximum": float(x.max()),
        "Mean": float(mean),
        "Median": float(np.median(x)),
        "InterquartileRange": float(p75 - p25),
        "Range": float(x.max() - x.min()),
        "MeanAbsoluteDeviation": float(np.abs(dev).mean()),
        # no voxel may fall inside [P10, P90] for tiny ROIs
        "RobustMeanAbsoluteDeviation": float(np.abs(robust - robust.mean()).mean()) if robust.size else NAN,
        "RootMeanSquared": float(np.sqrt(energy / n)),
        "Skewness": NAN if constant else float((dev**3).mean() / m2**1.5),
        "Kurtosis": NAN if constant else float((dev**4).mean() / m2**2),
        "Variance": 0.0 if constant else m2,
        "Uniformity": float((prob**2).sum()),
    }


def first_order_features(image: ImageVolume, mask: MaskVolume, roi: DiscretizedROI) -> dict:
    """18 first-order features from the resegmented raw intensities.

    Entropy and uniformity use the discretized histogram of ``roi``; all
    other features use the HU values under ``mask``. Skewness and kurtosis
    are missing (``None``) for a constant ROI; robust MAD is missing when
    no value lies within the 10th to 90th percentile range.
    """
    sel = mask.values
    values = firstorder_from_values(image.values[sel], roi.levels[sel], image.voxel_volume)
    return _finalise("firstorder", values)
