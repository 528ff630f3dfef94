"""Volume and cohort-manifest I/O.

Volumes are read from and written to a small subset of NIfTI-1: single-file
``.nii`` / ``.nii.gz`` (plus the two-file ``.hdr``/``.img`` pair on read),
little-endian, 3D, datatypes int16 / uint8 / float32, axis-aligned affines.

Arrays are held in C order as ``(z, y, x)`` so that the fastest-varying axis
matches the on-disk voxel order. ``spacing``, ``origin`` and ``dims`` are
always given in ``(x, y, z)`` order, as in the NIfTI header.
"""
from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "ImageVolume",
    "MaskVolume",
    "ManifestEntry",
    "CohortManifest",
    "NiftiFormatError",
    "UnsupportedOrientationError",
    "UnsupportedTypeError",
    "ManifestSchemaError",
    "DuplicateEntryError",
    "read_volume",
    "read_mask",
    "write_volume",
    "load_manifest",
    "write_manifest",
    "MANIFEST_COLUMNS",
]

HEADER_SIZE = 348
VOX_OFFSET = 352

_NIFTI_DTYPES = {
    2: np.dtype("<u1"),
    4: np.dtype("<i2"),
    16: np.dtype("<f4"),
}
_DTYPE_CODES = {"uint8": 2, "int16": 4, "float32": 16}

MANIFEST_COLUMNS = (
    "subject_id",
    "roi",
    "image_path",
    "mask_path",
    "slice_thickness_mm",
    "asir_percent",
    "time_days",
    "event",
)
ROI_NAMES = ("tumor", "liver")


class NiftiFormatError(ValueError):
    """Malformed or unsupported NIfTI header."""


class UnsupportedOrientationError(NiftiFormatError):
    pass


class UnsupportedTypeError(NiftiFormatError):
    pass


class ManifestSchemaError(ValueError):
    pass


class DuplicateEntryError(ValueError):
    pass


def _as_triple(values, name, positive=False):
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(out)}")
    if positive and not all(v > 0 for v in out):
        raise ValueError(f"{name} components must be > 0, got {out}")
    return out


@dataclass(frozen=True, eq=False)
class ImageVolume:
    """Dense scalar grid with physical geometry.

    ``values`` has shape ``(nz, ny, nx)``; ``spacing`` and ``origin`` are
    ``(x, y, z)`` in mm. ``origin`` is the centre of voxel ``(0, 0, 0)``.
    """

    values: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"volume must be a non-empty 3D grid, got shape {values.shape}")
        object.__setattr__(self, "values", self._coerce(values))
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    @staticmethod
    def _coerce(values):
        return values.astype(np.float64, copy=False)

    @property
    def dims(self) -> tuple:
        nz, ny, nx = self.values.shape
        return (nx, ny, nz)

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def same_geometry(self, other) -> bool:
        return (
            self.values.shape == other.values.shape
            and self.spacing == other.spacing
            and self.origin == other.origin
        )

    def with_values(self, values):
        return type(self)(values, self.spacing, self.origin)

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.same_geometry(other)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MaskVolume(ImageVolume):
    """Binary ROI grid (``values`` is a boolean array)."""

    @staticmethod
    def _coerce(values):
        if values.dtype != bool:
            uniq = np.unique(values)
            if not np.all(np.isin(uniq, (0, 1))):
                raise ValueError(f"mask values must be 0/1, found {uniq[:5]}")
            values = values.astype(bool)
        return values

    @property
    def count(self) -> int:
        return int(self.values.sum())


# --------------------------------------------------------------------------- NIfTI


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _quaternion_matrix(b, c, d, qfac):
    a2 = 1.0 - (b * b + c * c + d * d)
    a = math.sqrt(a2) if a2 > 1e-7 else 0.0
    r = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )
    r[:, 2] *= qfac
    return r


def _check_axis_aligned(direction: np.ndarray, path):
    diag = np.abs(np.diag(direction))
    if np.any(diag == 0):
        raise UnsupportedOrientationError(f"{path}: permuted or degenerate axes in affine")
    off = np.abs(direction - np.diag(np.diag(direction)))
    for i in range(3):
        for j in range(3):
            if i != j and off[i, j] > 1e-6 * max(diag[i], diag[j]):
                raise UnsupportedOrientationError(f"{path}: oblique affine is not supported")


def _f32(v) -> float:
    # header fields are float32; recover the shortest decimal they encode
    return float(str(np.float32(v)))


def _parse_header(hdr: bytes, path) -> dict:
    if len(hdr) < HEADER_SIZE:
        raise NiftiFormatError(f"{path}: truncated header ({len(hdr)} bytes)")
    (sizeof_hdr,) = struct.unpack_from("<i", hdr, 0)
    if sizeof_hdr != HEADER_SIZE:
        if struct.unpack_from(">i", hdr, 0)[0] == HEADER_SIZE:
            raise NiftiFormatError(f"{path}: big-endian NIfTI is not supported")
        raise NiftiFormatError(f"{path}: sizeof_hdr is {sizeof_hdr}, expected 348")
    magic = hdr[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiFormatError(f"{path}: bad magic {magic!r}")
    dim = struct.unpack_from("<8h", hdr, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiFormatError(f"{path}: invalid dim[0]={ndim}")
    extra = [d for d in dim[4 : ndim + 1] if d > 1]
    if ndim > 3 and extra:
        raise NiftiFormatError(f"{path}: 4D or higher volumes are not supported")
    shape = [dim[i] if i <= ndim else 1 for i in (1, 2, 3)]
    if any(s < 1 for s in shape):
        raise NiftiFormatError(f"{path}: invalid dims {shape}")
    (datatype,) = struct.unpack_from("<h", hdr, 70)
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedTypeError(f"{path}: unsupported datatype code {datatype}")
    pixdim = struct.unpack_from("<8f", hdr, 76)
    spacing = tuple(_f32(p) for p in pixdim[1:4])
    if not all(s > 0 for s in spacing):
        raise NiftiFormatError(f"{path}: non-positive pixdim {spacing}")
    (vox_offset,) = struct.unpack_from("<f", hdr, 108)
    slope, inter = struct.unpack_from("<2f", hdr, 112)
    qform_code, sform_code = struct.unpack_from("<2h", hdr, 252)
    if sform_code > 0:
        rows = np.array(struct.unpack_from("<12f", hdr, 280), dtype=np.float64).reshape(3, 4)
        direction = rows[:, :3] / np.asarray(spacing)
        origin = tuple(_f32(v) for v in rows[:, 3])
    elif qform_code > 0:
        b, c, d = struct.unpack_from("<3f", hdr, 256)
        qoff = struct.unpack_from("<3f", hdr, 268)
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        direction = _quaternion_matrix(b, c, d, qfac)
        origin = tuple(_f32(v) for v in qoff)
    else:
        direction = np.eye(3)
        origin = (0.0, 0.0, 0.0)
    _check_axis_aligned(direction, path)
    return {
        "magic": magic,
        "shape": tuple(shape),
        "datatype": datatype,
        "spacing": spacing,
        "origin": origin,
        "vox_offset": int(vox_offset),
        "slope": float(slope),
        "inter": float(inter),
    }


def read_volume(path) -> Union[ImageVolume, MaskVolume]:
    """Read a NIfTI-1 volume.

    A uint8 payload holding only 0/1 with no intensity scaling is returned as
    a :class:`MaskVolume`; anything else becomes an :class:`ImageVolume` with
    ``scl_slope``/``scl_inter`` applied.
    """
    path = Path(path)
    raw = _read_bytes(path)
    info = _parse_header(raw, path)
    if info["magic"] == b"ni1\x00":
        img_path = path.with_suffix(".img")
        if not img_path.exists():
            img_path = Path(str(path).replace(".hdr", ".img"))
        payload = _read_bytes(img_path)
        offset = 0
    else:
        payload = raw
        offset = max(info["vox_offset"], VOX_OFFSET)
    nx, ny, nz = info["shape"]
    dtype = _NIFTI_DTYPES[info["datatype"]]
    count = nx * ny * nz
    needed = offset + count * dtype.itemsize
    if len(payload) < needed:
        raise NiftiFormatError(f"{path}: voxel data truncated ({len(payload)} < {needed} bytes)")
    data = np.frombuffer(payload, dtype=dtype, count=count, offset=offset).reshape(nz, ny, nx)

    slope, inter = info["slope"], info["inter"]
    scaled = slope not in (0.0, 1.0) or inter != 0.0 or not np.isfinite(slope)
    if scaled and np.isfinite(slope) and slope != 0.0:
        values = data.astype(np.float64) * slope + inter
    else:
        values = data.astype(np.float64) if dtype.kind == "f" else data.copy()
        scaled = False

    if info["datatype"] == 2 and not scaled and np.all(data <= 1):
        return MaskVolume(data.astype(bool), info["spacing"], info["origin"])
    return ImageVolume(values, info["spacing"], info["origin"])


def read_mask(path) -> MaskVolume:
    """Read a volume and coerce it to a binary mask (nonzero = ROI)."""
    vol = read_volume(path)
    if isinstance(vol, MaskVolume):
        return vol
    return MaskVolume(vol.values != 0, vol.spacing, vol.origin)


def _build_header(shape_xyz, datatype, spacing, origin) -> bytes:
    hdr = bytearray(VOX_OFFSET)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *shape_xyz, 1, 1, 1, 1)
    bitpix = _NIFTI_DTYPES[datatype].itemsize * 8
    struct.pack_into("<2h", hdr, 70, datatype, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    struct.pack_into("<B", hdr, 123, 2)  # xyzt_units: mm
    struct.pack_into("<2h", hdr, 252, 1, 1)  # qform_code, sform_code
    struct.pack_into("<6f", hdr, 256, 0.0, 0.0, 0.0, *origin)
    sx, sy, sz = spacing
    ox, oy, oz = origin
    struct.pack_into("<12f", hdr, 280, sx, 0, 0, ox, 0, sy, 0, oy, 0, 0, sz, oz)
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr)


def write_volume(volume: ImageVolume, path, dtype: Optional[str] = None) -> None:
    """Write ``volume`` as single-file NIfTI-1 (gzip when the name ends in .gz).

    ``dtype`` defaults to uint8 for masks and float32 otherwise; int16 is
    accepted for integer-valued images.
    """
    path = Path(path)
    if dtype is None:
        dtype = "uint8" if isinstance(volume, MaskVolume) else "float32"
    if dtype not in _DTYPE_CODES:
        raise UnsupportedTypeError(f"cannot write datatype {dtype!r}")
    code = _DTYPE_CODES[dtype]
    np_dtype = _NIFTI_DTYPES[code]
    values = volume.values
    if np_dtype.kind in "iu":
        info = np.iinfo(np_dtype)
        if np.any(values != np.round(values)) or values.min() < info.min or values.max() > info.max:
            raise ValueError(f"values do not fit {dtype} exactly")
    payload = np.ascontiguousarray(values.astype(np_dtype)).tobytes()
    blob = _build_header(volume.dims, code, volume.spacing, volume.origin) + payload
    if path.suffix == ".gz":
        blob = gzip.compress(blob, mtime=0)
    path.write_bytes(blob)


# --------------------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    roi: str
    image_path: Path
    mask_path: Path
    slice_thickness_mm: float
    asir_percent: Optional[float] = None
    time_days: Optional[float] = None
    event: Optional[bool] = None

    @property
    def key(self):
        return (self.subject_id, self.roi, self.slice_thickness_mm, self.asir_percent)

    @property
    def recon(self):
        """(thickness, asir) reconstruction identifier."""
        return (self.slice_thickness_mm, self.asir_percent)


def _sort_key(entry: ManifestEntry):
    asir = -1.0 if entry.asir_percent is None else entry.asir_percent
    return (entry.subject_id, entry.roi, entry.slice_thickness_mm, asir)


@dataclass(frozen=True)
class CohortManifest:
    entries: tuple = field(default_factory=tuple)

    @property
    def is_survival(self) -> bool:
        return bool(self.entries) and self.entries[0].time_days is not None

    @property
    def subjects(self) -> list:
        return sorted({e.subject_id for e in self.entries})

    def survival(self) -> dict:
        """Map subject_id -> (time_days, event)."""
        if not self.is_survival:
            return {}
        return {e.subject_id: (e.time_days, e.event) for e in self.entries}

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def _parse_float(text, column, row_no, allow_empty=False):
    text = (text or "").strip()
    if text == "":
        if allow_empty:
            return None
        raise ManifestSchemaError(f"row {row_no}: empty {column}")
    try:
        return float(text)
    except ValueError:
        raise ManifestSchemaError(f"row {row_no}: {column}={text!r} is not a number") from None


def _parse_event(text, row_no):
    text = (text or "").strip().lower()
    if text in ("1", "true", "yes", "1.0"):
        return True
    if text in ("0", "false", "no", "0.0"):
        return False
    raise ManifestSchemaError(f"row {row_no}: event={text!r} is not a boolean")


def load_manifest(path) -> CohortManifest:
    """Load and validate a cohort manifest CSV.

    Relative image/mask paths are resolved against the manifest's directory.
    Entries are returned sorted by (subject, roi, thickness, asir) so the
    result does not depend on row order.
    """
    path = Path(path)
    base = path.parent
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise ManifestSchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)

    entries = []
    seen = set()
    survival_rows = 0
    per_subject = {}
    for row_no, row in enumerate(rows, start=2):
        roi = row["roi"].strip()
        if roi not in ROI_NAMES:
            raise ManifestSchemaError(f"row {row_no}: roi must be one of {ROI_NAMES}, got {roi!r}")
        subject = row["subject_id"].strip()
        if not subject:
            raise ManifestSchemaError(f"row {row_no}: empty subject_id")
        thickness = _parse_float(row["slice_thickness_mm"], "slice_thickness_mm", row_no)
        if thickness <= 0:
            raise ValueError(f"row {row_no}: slice_thickness_mm must be > 0")
        asir = _parse_float(row["asir_percent"], "asir_percent", row_no, allow_empty=True)
        time_days = _parse_float(row["time_days"], "time_days", row_no, allow_empty=True)
        event = None
        if time_days is not None:
            if time_days <= 0:
                raise ValueError(f"row {row_no}: time_days must be > 0, got {time_days}")
            event = _parse_event(row["event"], row_no)
            survival_rows += 1
            prev = per_subject.setdefault(subject, (time_days, event))
            if prev != (time_days, event):
                raise ValueError(f"row {row_no}: inconsistent survival data for subject {subject}")
        entry = ManifestEntry(
            subject_id=subject,
            roi=roi,
            image_path=(base / row["image_path"].strip()),
            mask_path=(base / row["mask_path"].strip()),
            slice_thickness_mm=thickness,
            asir_percent=asir,
            time_days=time_days,
            event=event,
        )
        if entry.key in seen:
            raise DuplicateEntryError(f"row {row_no}: duplicate entry {entry.key}")
        seen.add(entry.key)
        entries.append(entry)

    if 0 < survival_rows < len(entries):
        raise ManifestSchemaError(f"{path}: survival columns must be filled on all rows or none")
    return CohortManifest(tuple(sorted(entries, key=_sort_key)))


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    return repr(float(value))


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    """Write entries as manifest CSV with paths relative to the manifest."""
    path = Path(path)
    base = path.parent.resolve()
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for e in sorted(entries, key=_sort_key):
            image = Path(e.image_path).resolve()
            mask = Path(e.mask_path).resolve()
            writer.writerow(
                [
                    e.subject_id,
                    e.roi,
                    image.relative_to(base).as_posix() if image.is_relative_to(base) else str(image),
                    mask.relative_to(base).as_posix() if mask.is_relative_to(base) else str(mask),
                    _fmt(e.slice_thickness_mm),
                    _fmt(e.asir_percent),
                    _fmt(e.time_days),
                    _fmt(e.event),
                ]
            )
