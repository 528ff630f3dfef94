"""Resampling, resegmentation and intensity discretization.

The extraction pipeline order is: resample image and mask, resegment the
resampled mask on the resampled image, then discretize the remaining ROI.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .volume_io import ImageVolume, MaskVolume

logger = logging.getLogger(__name__)

__all__ = [
    "AGG_2_5D",
    "AGG_3D",
    "ExtractionConfig",
    "SETTINGS",
    "SETTING_NAMES",
    "DiscretizedROI",
    "GeometryError",
    "EmptyROIError",
    "get_setting",
    "load_settings",
    "resample",
    "resegment",
    "discretize",
    "preprocess_roi",
]

AGG_2_5D = "agg2_5D"
AGG_3D = "agg3D"
PRESERVE = "preserve"
_AGG_ALIASES = {"2.5d": AGG_2_5D, "agg2_5d": AGG_2_5D, "3d": AGG_3D, "agg3d": AGG_3D}
_INTERPOLATORS = {"bspline3": 3, "trilinear": 1, "nearest": 0}


class GeometryError(ValueError):
    pass


class EmptyROIError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionConfig:
    """One feature extraction setting.

    ``z_mm=None`` means the z spacing of the input is preserved (in-plane
    resampling only).
    """

    name: str
    in_plane_mm: float
    z_mm: Optional[float]
    aggregation: str
    bin_count: int = 24
    resegment_window: tuple = (-50.0, 350.0)
    image_interpolator: str = "bspline3"
    mask_interpolator: str = "nearest"

    def __post_init__(self):
        agg = _AGG_ALIASES.get(str(self.aggregation).lower())
        if agg is None:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        object.__setattr__(self, "aggregation", agg)
        z = self.z_mm
        if isinstance(z, str):
            if z != PRESERVE:
                raise ValueError(f"z_mm must be a number or {PRESERVE!r}")
            z = None
        object.__setattr__(self, "z_mm", None if z is None else float(z))
        object.__setattr__(self, "in_plane_mm", float(self.in_plane_mm))
        lo, hi = (float(v) for v in self.resegment_window)
        if lo > hi:
            raise ValueError("resegment_window must be (lo, hi) with lo <= hi")
        object.__setattr__(self, "resegment_window", (lo, hi))
        if self.in_plane_mm <= 0 or (self.z_mm is not None and self.z_mm <= 0):
            raise ValueError("resampling spacing must be > 0")
        if int(self.bin_count) < 2:
            raise ValueError("bin_count must be >= 2")
        if self.image_interpolator not in _INTERPOLATORS:
            raise ValueError(f"unknown image interpolator {self.image_interpolator!r}")
        if self.mask_interpolator != "nearest":
            raise ValueError("masks are always resampled with nearest-neighbour")
        if self.name.endswith("i") and (self.z_mm is not None or agg != AGG_2_5D):
            raise ValueError(f"{self.name}: in-plane-only settings must preserve z and use 2.5D")
        paper = _PAPER_TABLE.get(self.name)
        if paper is not None and (self.in_plane_mm, self.z_mm, self.aggregation) != paper:
            raise ValueError(f"{self.name}: resampling/aggregation differ from the built-in setting")

    @property
    def target_spacing(self):
        return (self.in_plane_mm, self.in_plane_mm, PRESERVE if self.z_mm is None else self.z_mm)

    @property
    def is_3d(self) -> bool:
        return self.aggregation == AGG_3D


_PAPER_TABLE = {
    "L2i": (1.0, None, AGG_2_5D),
    "L2": (1.0, 1.0, AGG_2_5D),
    "L3": (1.0, 1.0, AGG_3D),
    "S2i": (0.85, None, AGG_2_5D),
    "S2": (0.85, 0.85, AGG_2_5D),
    "S3": (0.85, 0.85, AGG_3D),
    "A2": (0.85, 2.5, AGG_2_5D),
    "A3": (0.85, 2.5, AGG_3D),
}

SETTINGS = {
    name: ExtractionConfig(name, in_plane, z, agg) for name, (in_plane, z, agg) in _PAPER_TABLE.items()
}
SETTING_NAMES = tuple(SETTINGS)


def get_setting(name: str) -> ExtractionConfig:
    try:
        return SETTINGS[name]
    except KeyError:
        raise ValueError(
            f"unknown extraction setting {name!r}; valid names: {', '.join(SETTING_NAMES)}"
        ) from None


def load_settings(path) -> dict:
    """Load extraction settings from a JSON mapping ``name -> parameters``.

    Example::

        {"L2i": {"in_plane_mm": 1.0, "z_mm": "preserve", "aggregation": "2.5D"},
         "B3":  {"in_plane_mm": 0.7, "z_mm": 0.7, "aggregation": "3D", "bin_count": 32}}

    A bare list of names selects built-in settings.
    """
    data = json.loads(Path(path).read_text())
    if isinstance(data, list):
        return {name: get_setting(name) for name in data}
    out = {}
    for name, params in data.items():
        params = dict(params)
        if "resegment_window" in params:
            params["resegment_window"] = tuple(params["resegment_window"])
        out[name] = ExtractionConfig(name=name, **params)
    return out


# --------------------------------------------------------------------------- resampling


def _output_axis(n, src, dst):
    n_out = math.ceil(n * src / dst - 1e-9)
    if n_out < 1:
        raise GeometryError(f"resampling {n} voxels of {src} mm to {dst} mm leaves no voxels")
    # index coordinates in the source grid, centred on the physical centre
    coords = (n - 1) / 2.0 + (np.arange(n_out) - (n_out - 1) / 2.0) * (dst / src)
    return n_out, coords


def resample(volume: ImageVolume, target_spacing, interpolator: str = "bspline3") -> ImageVolume:
    """Resample ``volume`` onto a grid with ``target_spacing`` (x, y, z) mm.

    The z component may be ``"preserve"`` (or None) to keep the source z
    spacing. The output grid keeps the physical centre of the input and has
    ``ceil(extent / spacing)`` voxels per axis. Masks must use ``nearest``.
    """
    if interpolator not in _INTERPOLATORS:
        raise ValueError(f"unknown interpolator {interpolator!r}")
    is_mask = isinstance(volume, MaskVolume)
    if is_mask and interpolator != "nearest":
        raise ValueError("masks can only be resampled with nearest-neighbour interpolation")
    target = list(target_spacing)
    if len(target) != 3:
        raise ValueError("target_spacing needs 3 components")
    if target[2] is None or target[2] == PRESERVE:
        target[2] = volume.spacing[2]
    target = tuple(float(t) for t in target)
    if not all(t > 0 for t in target):
        raise GeometryError(f"target spacing must be positive, got {target}")

    if all(abs(t - s) <= 1e-12 * s for t, s in zip(target, volume.spacing)):
        return type(volume)(volume.values.copy(), volume.spacing, volume.origin)

    nx, ny, nz = volume.dims
    axes = [_output_axis(n, s, t) for n, s, t in zip((nx, ny, nz), volume.spacing, target)]
    (nx2, cx), (ny2, cy), (nz2, cz) = axes
    origin = tuple(
        o + (n - 1) / 2.0 * s - (n2 - 1) / 2.0 * t
        for o, n, s, n2, t in zip(volume.origin, (nx, ny, nz), volume.spacing, (nx2, ny2, nz2), target)
    )
    grid = np.meshgrid(cz, cy, cx, indexing="ij")
    order = _INTERPOLATORS[interpolator]
    if order == 0:
        data = volume.values.astype(np.uint8) if is_mask else volume.values
        out = ndimage.map_coordinates(data, grid, order=0, mode="nearest")
        values = out.astype(bool) if is_mask else out
    elif order == 1:
        values = ndimage.map_coordinates(volume.values, grid, order=1, mode="nearest")
    else:
        values = ndimage.map_coordinates(volume.values, grid, order=3, mode="mirror")
    return type(volume)(values, target, origin)


# --------------------------------------------------------------------------- resegmentation


def resegment(image: ImageVolume, mask: MaskVolume, window=(-50.0, 350.0), return_removed=False):
    """Drop ROI voxels whose intensity lies outside the closed ``window``."""
    if not image.same_geometry(mask):
        raise GeometryError("image and mask geometry differ")
    lo, hi = window
    keep = mask.values & (image.values >= lo) & (image.values <= hi)
    removed = int(mask.values.sum() - keep.sum())
    if not keep.any():
        raise EmptyROIError(f"no ROI voxels inside resegmentation window [{lo}, {hi}]")
    if removed:
        logger.debug("resegmentation removed %d voxels", removed)
    out = MaskVolume(keep, mask.spacing, mask.origin)
    return (out, removed) if return_removed else out


# --------------------------------------------------------------------------- discretization


@dataclass(frozen=True, eq=False)
class DiscretizedROI:
    """Gray levels of an ROI after fixed-bin-count discretization.

    ``levels`` is a full-size integer grid with 0 outside the ROI and
    1..n_levels inside it.
    """

    levels: np.ndarray
    n_levels: int
    voxel_count: int
    intensity_stats: tuple  # (min, max, mean) of the raw HU values

    @property
    def mask(self) -> np.ndarray:
        return self.levels > 0

    @property
    def slice_index(self) -> np.ndarray:
        """Axial slice id of every ROI voxel (C order)."""
        return np.nonzero(self.levels)[0]

    def cropped(self, pad: int = 1) -> np.ndarray:
        """ROI bounding box of ``levels`` with ``pad`` zero voxels around it."""
        idx = np.nonzero(self.levels)
        lo = [int(i.min()) for i in idx]
        hi = [int(i.max()) + 1 for i in idx]
        box = self.levels[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
        return np.pad(box, pad)


def discretize_values(values: np.ndarray, bin_count: int):
    """Map intensities to levels 1..bin_count over their own [min, max].

    Returns ``(levels, n_levels)``; a constant input maps to a single level.
    """
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.ones(values.shape, dtype=np.int32), 1
    idx = np.floor((values - lo) * bin_count / (hi - lo)).astype(np.int64) + 1
    return np.minimum(idx, bin_count).astype(np.int32), int(bin_count)


def discretize(image: ImageVolume, mask: MaskVolume, bin_count: int = 24) -> DiscretizedROI:
    if not image.same_geometry(mask):
        raise GeometryError("image and mask geometry differ")
    roi = mask.values
    if not roi.any():
        raise EmptyROIError("cannot discretize an empty ROI")
    vals = image.values[roi]
    lv, n_levels = discretize_values(vals, bin_count)
    levels = np.zeros(roi.shape, dtype=np.int32)
    levels[roi] = lv
    stats = (float(vals.min()), float(vals.max()), float(vals.mean()))
    return DiscretizedROI(levels, n_levels, int(roi.sum()), stats)


def preprocess_roi(image: ImageVolume, mask: MaskVolume, config: ExtractionConfig, resampled_image=None):
    """Run resample -> resegment -> discretize for one ROI.

    ``resampled_image`` may be supplied to reuse an image already resampled
    with ``config`` (it is shared between ROIs of one scan).
    Returns ``(image_r, mask_r, roi)``.
    """
    if not image.same_geometry(mask):
        raise GeometryError("image and mask geometry differ")
    if resampled_image is None:
        resampled_image = resample(image, config.target_spacing, config.image_interpolator)
    mask_r = resample(mask, config.target_spacing, "nearest")
    mask_r = resegment(resampled_image, mask_r, config.resegment_window)
    roi = discretize(resampled_image, mask_r, config.bin_count)
    return resampled_image, mask_r, roi


def with_bins(config: ExtractionConfig, bin_count: int) -> ExtractionConfig:
    return replace(config, bin_count=bin_count)
