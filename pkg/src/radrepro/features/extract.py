"""Per-ROI feature extraction under one extraction setting."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

from ..preprocess import EmptyROIError, ExtractionConfig, preprocess_roi, resample
from ..volume_io import ImageVolume, MaskVolume
from . import registry
from .firstorder import first_order_features
from .texture import UndefinedFeatureWarning, aggregate_features

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureVector:
    """All 93 feature values for one ROI; missing values are ``None``."""

    extractor_name: str
    roi_name: str
    values: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if set(self.values) != set(registry.FEATURE_IDS):
            raise ValueError(f"expected {registry.N_FEATURES} feature ids, got {len(self.values)}")

    def __getitem__(self, feature_id):
        return self.values[feature_id]

    def missing(self) -> list:
        return [fid for fid in registry.FEATURE_IDS if self.values[fid] is None]


@dataclass(frozen=True)
class ExtractionFailure:
    extractor_name: str
    roi_name: str
    reason: str


def extract_roi(image: ImageVolume, mask: MaskVolume, config: ExtractionConfig, resampled_image=None) -> dict:
    """Feature mapping ``(family, name) -> value`` for one ROI."""
    image_r, mask_r, roi = preprocess_roi(image, mask, config, resampled_image)
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedFeatureWarning)
        for name, v in first_order_features(image_r, mask_r, roi).items():
            out[("firstorder", name)] = v
        for family in registry.TEXTURE_FAMILIES:
            for name, v in aggregate_features(roi, family, config.aggregation).items():
                out[(family, name)] = v
    return {fid: out[fid] for fid in registry.FEATURE_IDS}


def extract(image: ImageVolume, masks: Mapping[str, MaskVolume], config: ExtractionConfig) -> dict:
    """Extract features for every ROI in ``masks``.

    Returns ``roi_name -> FeatureVector`` or, for ROIs that become empty
    after resegmentation, ``roi_name -> ExtractionFailure``. The image is
    resampled once and shared by all ROIs.
    """
    resampled: Optional[ImageVolume] = None
    results = {}
    for roi_name in sorted(masks):
        mask = masks[roi_name]
        if not image.same_geometry(mask):
            raise ValueError(f"{roi_name}: mask geometry does not match the image")
        if resampled is None:
            resampled = resample(image, config.target_spacing, config.image_interpolator)
        try:
            values = extract_roi(image, mask, config, resampled)
        except EmptyROIError as exc:
            logger.warning("%s/%s: %s", config.name, roi_name, exc)
            results[roi_name] = ExtractionFailure(config.name, roi_name, str(exc))
            continue
        results[roi_name] = FeatureVector(config.name, roi_name, values)
    return results
