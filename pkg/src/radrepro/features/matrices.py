"""Texture matrix construction on discretized ROIs.

All builders take a gray-level grid ``levels`` in ``(z, y, x)`` order with 0
marking voxels outside the ROI and 1..Ng inside it. The grid must carry at
least one voxel of zero padding on every side (see
:meth:`DiscretizedROI.cropped`), so neighbour lookups never wrap around.

Offsets and directions are ``(dz, dy, dx)`` triples. Each unique direction is
represented once, with its first nonzero component positive.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from ..preprocess import DiscretizedROI

__all__ = [
    "DIRECTIONS_2D",
    "DIRECTIONS_3D",
    "NEIGHBOURS_2D",
    "NEIGHBOURS_3D",
    "TextureMatrix",
    "glcm_matrix",
    "glrlm_matrix",
    "glszm_matrix",
    "gldm_matrix",
    "ngtdm_matrix",
    "build_texture_matrix",
]

NEIGHBOURS_3D = tuple(o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0))
NEIGHBOURS_2D = tuple(o for o in NEIGHBOURS_3D if o[0] == 0)


def _canonical(o):
    for c in o:
        if c != 0:
            return c > 0
    return False


DIRECTIONS_3D = tuple(o for o in NEIGHBOURS_3D if _canonical(o))
DIRECTIONS_2D = tuple(o for o in DIRECTIONS_3D if o[0] == 0)

SCOPES = ("single_slice", "merged_slices", "volume")


@dataclass(frozen=True, eq=False)
class TextureMatrix:
    family: str
    data: np.ndarray
    direction: Optional[tuple] = None
    slice_scope: str = "volume"
    n_voxels: int = 0


def _pair_views(levels, offset):
    """Views ``a``, ``b`` with ``b[p] = levels[p + offset]`` on the overlap."""
    src, dst = [], []
    for d, n in zip(offset, levels.shape):
        src.append(slice(max(0, -d), n - max(0, d)))
        dst.append(slice(max(0, d), n - max(0, -d)))
    return levels[tuple(src)], levels[tuple(dst)]


def _core_neighbour(levels, offset):
    """Neighbour values at ``offset`` for every voxel of the unpadded core."""
    sl = tuple(slice(1 + d, n - 1 + d) for d, n in zip(offset, levels.shape))
    return levels[sl]


def glcm_matrix(levels: np.ndarray, n_levels: int, direction) -> np.ndarray:
    """Symmetric co-occurrence counts for neighbours at ``direction``."""
    a, b = _pair_views(levels, direction)
    valid = (a > 0) & (b > 0)
    codes = (a[valid].astype(np.int64) - 1) * n_levels + (b[valid] - 1)
    counts = np.bincount(codes, minlength=n_levels * n_levels).reshape(n_levels, n_levels)
    return counts + counts.T


def glrlm_matrix(levels: np.ndarray, n_levels: int, direction, max_run: Optional[int] = None) -> np.ndarray:
    """Counts of maximal equal-level runs along ``direction``.

    Column ``j`` holds runs of length ``j + 1``.
    """
    if max_run is None:
        max_run = max(levels.shape)
    d = np.asarray(direction)
    axis = int(np.flatnonzero(d)[0])
    if d[axis] != 1:
        raise ValueError(f"direction {tuple(direction)} is not canonical")
    padded = np.pad(levels, 1)
    core = padded[1:-1, 1:-1, 1:-1]
    prev = padded[tuple(slice(1 - k, padded.shape[i] - 1 - k) for i, k in enumerate(d))]
    nxt = padded[tuple(slice(1 + k, padded.shape[i] - 1 + k) for i, k in enumerate(d))]
    inside = core > 0
    starts = np.nonzero(inside & (prev != core))
    ends = np.nonzero(inside & (nxt != core))

    def order(coords):
        t = coords[axis]
        key = [coords[i] - t * d[i] for i in range(3)]
        return t, np.lexsort((t, key[2], key[1], key[0]))

    t_start, o_start = order(starts)
    t_end, o_end = order(ends)
    lengths = t_end[o_end] - t_start[o_start] + 1
    run_levels = core[tuple(c[o_start] for c in starts)]
    codes = (run_levels.astype(np.int64) - 1) * max_run + (lengths - 1)
    return np.bincount(codes, minlength=n_levels * max_run).reshape(n_levels, max_run)


def _structure(three_d: bool) -> np.ndarray:
    s = np.ones((3, 3, 3), dtype=bool)
    if not three_d:
        s[0] = s[2] = False
    return s


def glszm_matrix(levels: np.ndarray, n_levels: int, three_d: bool = True) -> np.ndarray:
    """Counts of connected equal-level zones by size.

    Zones are 26-connected in 3D; 8-connected within each axial slice
    otherwise. Column ``j`` holds zones of size ``j + 1``.
    """
    structure = _structure(three_d)
    sizes_per_level = []
    for g in range(1, n_levels + 1):
        sel = levels == g
        if not sel.any():
            sizes_per_level.append(np.zeros(0, dtype=np.int64))
            continue
        labels, n = ndimage.label(sel, structure=structure)
        sizes_per_level.append(np.bincount(labels.ravel(), minlength=n + 1)[1:])
    max_size = max((int(s.max()) for s in sizes_per_level if s.size), default=1)
    out = np.zeros((n_levels, max_size), dtype=np.int64)
    for g, sizes in enumerate(sizes_per_level):
        if sizes.size:
            out[g] = np.bincount(sizes - 1, minlength=max_size)
    return out


def gldm_matrix(levels: np.ndarray, n_levels: int, three_d: bool = True) -> np.ndarray:
    """Gray level dependence counts (alpha = 0, distance 1).

    A voxel's dependence is 1 plus the number of in-ROI neighbours sharing
    its gray level; column ``j`` holds dependence ``j + 1``.
    """
    offsets = NEIGHBOURS_3D if three_d else NEIGHBOURS_2D
    core = levels[1:-1, 1:-1, 1:-1]
    dep = np.zeros(core.shape, dtype=np.int64)
    for o in offsets:
        dep += _core_neighbour(levels, o) == core
    inside = core > 0
    codes = (core[inside].astype(np.int64) - 1) * (len(offsets) + 1) + dep[inside]
    return np.bincount(codes, minlength=n_levels * (len(offsets) + 1)).reshape(n_levels, -1)


def ngtdm_matrix(levels: np.ndarray, n_levels: int, three_d: bool = True) -> np.ndarray:
    """Neighbourhood gray-tone difference table with columns ``(n_i, s_i)``.

    ``n_i`` counts ROI voxels of level ``i``; ``s_i`` sums ``|i - mean of
    in-ROI neighbours|`` over those voxels having at least one neighbour.
    """
    offsets = NEIGHBOURS_3D if three_d else NEIGHBOURS_2D
    core = levels[1:-1, 1:-1, 1:-1]
    total = np.zeros(core.shape, dtype=np.int64)
    count = np.zeros(core.shape, dtype=np.int64)
    for o in offsets:
        nb = _core_neighbour(levels, o)
        total += nb
        count += nb > 0
    inside = core > 0
    lv = core[inside].astype(np.int64)
    cnt = count[inside]
    diff = np.zeros(lv.shape)
    has = cnt > 0
    diff[has] = np.abs(lv[has] - total[inside][has] / cnt[has])
    out = np.zeros((n_levels, 2))
    out[:, 0] = np.bincount(lv - 1, minlength=n_levels)
    out[:, 1] = np.bincount(lv - 1, weights=diff, minlength=n_levels)
    return out


def build_texture_matrix(
    roi: DiscretizedROI, family: str, direction=None, scope: str = "volume", slice_id: Optional[int] = None
) -> TextureMatrix:
    """Build one texture matrix for ``roi``.

    ``scope`` is ``volume`` (3D neighbourhoods), ``merged_slices`` (in-plane
    neighbourhoods over all slices, i.e. per-slice matrices summed) or
    ``single_slice`` (in-plane neighbourhoods of axial slice ``slice_id``).
    """
    family = family.lower()
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    directional = family in ("glcm", "glrlm")
    if directional:
        if direction is None:
            raise ValueError(f"{family} needs a direction")
        direction = tuple(int(c) for c in direction)
        allowed = DIRECTIONS_3D if scope == "volume" else DIRECTIONS_2D
        if direction not in allowed:
            raise ValueError(f"direction {direction} is not valid for scope {scope!r}")
    elif direction is not None:
        raise ValueError(f"{family} is not directional")

    levels = roi.levels
    if scope == "single_slice":
        if slice_id is None:
            raise ValueError("single_slice scope needs slice_id")
        levels = levels[slice_id : slice_id + 1]
    n_voxels = int((levels > 0).sum())
    if n_voxels == 0:
        raise ValueError("empty ROI")
    idx = np.nonzero(levels)
    box = tuple(slice(int(i.min()), int(i.max()) + 1) for i in idx)
    grid = np.pad(levels[box], 1)
    ng = roi.n_levels
    three_d = scope == "volume"
    if family == "glcm":
        data = glcm_matrix(grid, ng, direction)
    elif family == "glrlm":
        data = glrlm_matrix(grid, ng, direction)
    elif family == "glszm":
        data = glszm_matrix(grid, ng, three_d)
    elif family == "gldm":
        data = gldm_matrix(grid, ng, three_d)
    elif family == "ngtdm":
        data = ngtdm_matrix(grid, ng, three_d)
    else:
        raise ValueError(f"unknown texture family {family!r}")
    return TextureMatrix(family, data, direction, scope, n_voxels)
