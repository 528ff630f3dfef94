"""Synthetic cohorts with known ground truth.

Each subject starts as one fine-grid volume (0.625 mm slices) holding a
correlated noise texture inside an ellipsoidal tumor and a surrounding liver
region. Thicker reconstructions are produced by averaging consecutive fine
slices, ASiR levels by in-plane Gaussian smoothing whose width grows with the
level, and survival outcomes by an exponential model whose log-hazard is a
known function of one texture parameter. Everything is synthetic; nothing
here tries to simulate CT physics.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage, optimize

from .preprocess import resample
from .survival.cindex import SurvivalRecord
from .volume_io import ImageVolume, ManifestEntry, MaskVolume, write_manifest, write_volume

logger = logging.getLogger(__name__)

__all__ = [
    "SynthSpecError",
    "SynthSpec",
    "SubjectParams",
    "FineSubject",
    "load_synth_spec",
    "subject_params",
    "generate_fine",
    "slab_average",
    "generate_subject",
    "hazard_link",
    "generate_outcomes",
    "write_cohort",
]

HAZARD_PARAMS = ("tumor_contrast", "tumor_corr_mm", "liver_contrast")
MASK_REFERENCE_MM = 5.0


class SynthSpecError(ValueError):
    """Invalid synthetic cohort specification."""


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic cohort.

    Ranges are ``(low, high)`` of a uniform draw per subject. Lengths are
    in mm, intensities in HU. ``asir_sigma_per_10`` is the in-plane
    Gaussian width (in voxels) added per 10 % ASiR.
    """

    n_subjects: int = 20
    fine_spacing_mm: float = 0.625
    fine_slices: int = 48
    in_plane_mm: float = 0.8
    grid_xy: int = 48
    thickness_levels: tuple = (2.5, 3.75, 5.0)
    asir_levels: tuple = (0, 10, 20, 30, 40, 50, 60)
    asir_sigma_per_10: float = 0.12
    liver_radii_mm: tuple = (17.0, 17.0, 13.0)
    tumor_radii_mm: tuple = (7.0, 7.0, 6.0)
    tumor_shift_mm: float = 3.0
    background_hu: float = -20.0
    liver_hu: float = 110.0
    tumor_hu: float = 70.0
    offset_hu: float = 0.0
    tumor_contrast: tuple = (10.0, 60.0)
    tumor_corr_mm: tuple = (1.0, 2.5)
    liver_contrast: tuple = (10.0, 30.0)
    liver_corr_mm: float = 2.0
    z_corr_factor: float = 2.0
    noise_hu: float = 15.0
    hazard_param: Optional[str] = "tumor_contrast"
    hazard_beta: float = 0.0
    base_rate_per_day: float = 1.0 / 700.0
    censoring_fraction: float = 0.4
    censor_all_at: Optional[float] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 2:
            raise SynthSpecError("n_subjects must be >= 2")
        if self.fine_spacing_mm <= 0 or self.in_plane_mm <= 0:
            raise SynthSpecError("spacings must be positive")
        object.__setattr__(self, "thickness_levels", tuple(float(t) for t in self.thickness_levels))
        object.__setattr__(self, "asir_levels", tuple(float(a) for a in self.asir_levels))
        for name in ("liver_radii_mm", "tumor_radii_mm", "tumor_contrast", "tumor_corr_mm", "liver_contrast"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        for t in self.thickness_levels + (MASK_REFERENCE_MM,):
            g = self.group_size(t)
            if self.fine_slices % g:
                raise SynthSpecError(f"{self.fine_slices} fine slices cannot be grouped by {g} for {t} mm")
        if any(a < 0 for a in self.asir_levels):
            raise SynthSpecError("ASiR levels must be >= 0")
        if self.hazard_param is not None and self.hazard_param not in HAZARD_PARAMS:
            raise SynthSpecError(f"hazard_param must be one of {HAZARD_PARAMS} or null")
        if not 0.0 <= self.censoring_fraction < 1.0:
            raise SynthSpecError("censoring_fraction must lie in [0, 1)")
        half = np.array([self.grid_xy * self.in_plane_mm, self.grid_xy * self.in_plane_mm, self.fine_slices * self.fine_spacing_mm]) / 2
        liver = np.array(self.liver_radii_mm)
        tumor = np.array(self.tumor_radii_mm)
        if np.any(liver >= half) or np.any(tumor + self.tumor_shift_mm >= liver):
            raise SynthSpecError("geometry too small: tumor must fit inside the liver and the liver inside the grid")

    def group_size(self, thickness: float) -> int:
        g = thickness / self.fine_spacing_mm
        if abs(g - round(g)) > 1e-9 or round(g) < 1:
            raise SynthSpecError(f"thickness {thickness} is not a multiple of {self.fine_spacing_mm}")
        return int(round(g))

    @property
    def reconstructions(self) -> list:
        return [(t, a) for t in self.thickness_levels for a in self.asir_levels]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def load_synth_spec(path) -> SynthSpec:
    """Read a JSON spec; unknown keys are an error."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise SynthSpecError("spec must be a JSON object")
    known = set(SynthSpec.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise SynthSpecError(f"unknown spec keys: {sorted(unknown)}")
    try:
        return SynthSpec(**raw)
    except TypeError as exc:
        raise SynthSpecError(str(exc)) from None


@dataclass(frozen=True)
class SubjectParams:
    subject_id: str
    tumor_contrast: float
    tumor_corr_mm: float
    liver_contrast: float
    tumor_centre_mm: tuple


def _rng(spec: SynthSpec, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.rng_seed, index, stream]))


def subject_params(spec: SynthSpec, index: int) -> SubjectParams:
    rng = _rng(spec, index, 0)
    shift = rng.uniform(-1.0, 1.0, size=3)
    shift = shift / max(1.0, np.linalg.norm(shift)) * spec.tumor_shift_mm
    return SubjectParams(
        subject_id=f"S{index:03d}",
        tumor_contrast=float(rng.uniform(*spec.tumor_contrast)),
        tumor_corr_mm=float(rng.uniform(*spec.tumor_corr_mm)),
        liver_contrast=float(rng.uniform(*spec.liver_contrast)),
        tumor_centre_mm=tuple(float(s) for s in shift),
    )


@dataclass(frozen=True)
class FineSubject:
    params: SubjectParams
    values: np.ndarray  # (z, y, x) on the fine grid
    tumor: np.ndarray
    liver: np.ndarray


def _unit_field(rng, shape, sigma_vox):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma_vox, mode="wrap")
    sd = f.std()
    return f / sd if sd > 0 else f


def _ellipsoid(spec: SynthSpec, radii, centre):
    nz, n = spec.fine_slices, spec.grid_xy
    z = (np.arange(nz) - (nz - 1) / 2) * spec.fine_spacing_mm
    y = (np.arange(n) - (n - 1) / 2) * spec.in_plane_mm
    x = y
    cx, cy, cz = centre
    rx, ry, rz = radii
    return (
        ((z[:, None, None] - cz) / rz) ** 2 + ((y[None, :, None] - cy) / ry) ** 2 + ((x[None, None, :] - cx) / rx) ** 2
    ) <= 1.0


def generate_fine(spec: SynthSpec, index: int) -> FineSubject:
    """Fine-grid volume and ROI masks of subject ``index``."""
    p = subject_params(spec, index)
    shape = (spec.fine_slices, spec.grid_xy, spec.grid_xy)
    rng = _rng(spec, index, 1)
    liver = _ellipsoid(spec, spec.liver_radii_mm, (0.0, 0.0, 0.0))
    tumor = _ellipsoid(spec, spec.tumor_radii_mm, p.tumor_centre_mm)
    liver &= ~tumor

    def sigma(corr_mm):
        return (corr_mm * spec.z_corr_factor / spec.fine_spacing_mm, corr_mm / spec.in_plane_mm, corr_mm / spec.in_plane_mm)

    values = np.full(shape, spec.background_hu, dtype=np.float64)
    if p.liver_contrast > 0:
        values[liver] = spec.liver_hu + p.liver_contrast * _unit_field(rng, shape, sigma(spec.liver_corr_mm))[liver]
    else:
        values[liver] = spec.liver_hu
    if p.tumor_contrast > 0:
        values[tumor] = spec.tumor_hu + p.tumor_contrast * _unit_field(rng, shape, sigma(p.tumor_corr_mm))[tumor]
    else:
        values[tumor] = spec.tumor_hu
    if spec.noise_hu > 0:
        values += spec.noise_hu * rng.standard_normal(shape)
    values += spec.offset_hu
    return FineSubject(p, values, tumor, liver)


def slab_average(values: np.ndarray, group: int) -> np.ndarray:
    """Average consecutive groups of ``group`` slices along axis 0."""
    nz = values.shape[0]
    if nz % group:
        raise SynthSpecError(f"{nz} slices cannot be grouped by {group}")
    return values.reshape(nz // group, group, *values.shape[1:]).mean(axis=1)


def _volume_origin(spec: SynthSpec, thickness: float, nz: int):
    half_xy = (spec.grid_xy - 1) / 2 * spec.in_plane_mm
    return (-half_xy, -half_xy, -(nz - 1) / 2 * thickness)


def _asir_smooth(values, spec: SynthSpec, asir: float):
    s = spec.asir_sigma_per_10 * asir / 10.0
    if s <= 0:
        return values
    return ndimage.gaussian_filter(values, (0.0, s, s), mode="nearest")


def generate_subject(spec: SynthSpec, index: int, fine: Optional[FineSubject] = None) -> dict:
    """All reconstructions of one subject.

    Returns ``{(thickness, asir): (ImageVolume, {"tumor": MaskVolume,
    "liver": MaskVolume})}``. Masks are drawn on the 5 mm grid and
    resampled nearest-neighbour to the other thicknesses.
    """
    fine = fine or generate_fine(spec, index)
    g_ref = spec.group_size(MASK_REFERENCE_MM)
    ref_masks = {}
    for roi, m in (("tumor", fine.tumor), ("liver", fine.liver)):
        frac = slab_average(m.astype(np.float64), g_ref)
        nz = frac.shape[0]
        ref_masks[roi] = MaskVolume(
            frac >= 0.5,
            (spec.in_plane_mm, spec.in_plane_mm, MASK_REFERENCE_MM),
            _volume_origin(spec, MASK_REFERENCE_MM, nz),
        )
    ref_masks["liver"] = ref_masks["liver"].with_values(ref_masks["liver"].values & ~ref_masks["tumor"].values)
    out = {}
    for t in spec.thickness_levels:
        slab = slab_average(fine.values, spec.group_size(t))
        spacing = (spec.in_plane_mm, spec.in_plane_mm, t)
        origin = _volume_origin(spec, t, slab.shape[0])
        masks = {roi: resample(m, spacing, "nearest") for roi, m in ref_masks.items()}
        for a in spec.asir_levels:
            image = ImageVolume(_asir_smooth(slab, spec, a), spacing, origin)
            out[(t, a)] = (image, masks)
    return out


# --------------------------------------------------------------------------- outcomes


def hazard_link(spec: SynthSpec, params: SubjectParams) -> float:
    """Log-hazard: ``beta`` times the planted parameter scaled to unit variance."""
    if spec.hazard_param is None or spec.hazard_beta == 0:
        return 0.0
    lo, hi = getattr(spec, spec.hazard_param)
    if hi == lo:
        return 0.0
    v = getattr(params, spec.hazard_param)
    z = (v - (lo + hi) / 2) / ((hi - lo) / math.sqrt(12.0))
    return float(spec.hazard_beta * z)


def _censor_horizon(rates, target):
    """Upper limit of a uniform censoring time giving ``target`` expected censoring."""
    rates = np.asarray(rates)

    def frac(c):
        x = rates * c
        return float(np.mean(-np.expm1(-x) / x)) - target

    hi = 1.0 / rates.min()
    while frac(hi) > 0:
        hi *= 2.0
    lo = hi
    while frac(lo) < 0:
        lo /= 2.0
    return optimize.brentq(frac, lo, hi, xtol=1e-12, rtol=1e-14)


def generate_outcomes(spec: SynthSpec, params) -> list:
    """Exponential survival times with independent uniform censoring.

    Subject ``i`` fails at rate ``base_rate * exp(hazard_link)``. Censoring
    times are uniform on ``[0, c_max]`` with ``c_max`` chosen so the
    expected censored fraction equals ``spec.censoring_fraction``. With
    ``censor_all_at`` set, every subject is censored at that time.
    """
    params = list(params)
    ids = [p.subject_id for p in params]
    if spec.censor_all_at is not None:
        return [SurvivalRecord(s, float(spec.censor_all_at), False) for s in ids]
    rates = np.array([spec.base_rate_per_day * math.exp(hazard_link(spec, p)) for p in params])
    cmax = _censor_horizon(rates, spec.censoring_fraction) if spec.censoring_fraction > 0 else math.inf
    out = []
    for k, (p, rate) in enumerate(zip(params, rates)):
        rng = _rng(spec, int(p.subject_id[1:]), 2)
        t = rng.exponential(1.0 / rate)
        c = rng.uniform(0.0, cmax) if math.isfinite(cmax) else math.inf
        # keep times strictly positive after rounding to a tenth of a day
        time = max(round(min(t, c), 1), 0.1)
        out.append(SurvivalRecord(p.subject_id, float(time), bool(t <= c)))
    return out


# --------------------------------------------------------------------------- disk layout


def _thickness_tag(t):
    return f"t{t:g}".replace(".", "p")


def _recon_tag(t, a):
    return f"{_thickness_tag(t)}_a{a:g}"


def _write_subject(spec: SynthSpec, index: int, root: Path):
    recons = generate_subject(spec, index)
    sid = subject_params(spec, index).subject_id
    sub = root / sid
    sub.mkdir(parents=True, exist_ok=True)
    entries = []
    written_masks = set()
    for (t, a), (image, masks) in sorted(recons.items()):
        img_path = sub / f"img_{_recon_tag(t, a)}.nii"
        write_volume(image, img_path)
        for roi, mask in masks.items():
            mpath = sub / f"mask_{roi}_{_thickness_tag(t)}.nii"
            if mpath not in written_masks:
                write_volume(mask, mpath)
                written_masks.add(mpath)
            entries.append((sid, roi, img_path, mpath, t, a))
    return entries


def write_cohort(spec: SynthSpec, out_dir, workers: int = 1, with_outcomes: Optional[bool] = None):
    """Write a cohort under ``out_dir``: NIfTI volumes, ``manifest.csv`` and ``spec.json``.

    Outcome columns are filled when ``with_outcomes`` is true (default:
    when ``spec`` has a single reconstruction). Returns the manifest path.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    idx = range(spec.n_subjects)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_subject = list(pool.map(lambda i: _write_subject(spec, i, root), idx))
    else:
        per_subject = [_write_subject(spec, i, root) for i in idx]
    if with_outcomes is None:
        with_outcomes = len(spec.reconstructions) == 1
    outcomes = {}
    if with_outcomes:
        outcomes = {o.subject_id: o for o in generate_outcomes(spec, [subject_params(spec, i) for i in idx])}
    entries = []
    for rows in per_subject:
        for sid, roi, img, mask, t, a in rows:
            o = outcomes.get(sid)
            entries.append(
                ManifestEntry(sid, roi, img, mask, t, a, o.time if o else None, o.event if o else None)
            )
    (root / "spec.json").write_text(spec.to_json() + "\n")
    manifest = root / "manifest.csv"
    write_manifest(entries, manifest)
    return manifest
