"""Harrell's concordance index for right-censored outcomes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SurvivalRecord",
    "NoComparablePairsError",
    "comparable_pairs",
    "harrell_cindex",
    "cindex_columns",
    "fold_cindex",
]


@dataclass(frozen=True)
class SurvivalRecord:
    subject_id: str
    time: float
    event: bool

    def __post_init__(self):
        if not self.time > 0:
            raise ValueError(f"survival time must be > 0, got {self.time}")


class NoComparablePairsError(ValueError):
    """The C-index is undefined: no pair of subjects can be ordered."""


def comparable_pairs(time, event):
    """Index arrays ``(i, j)`` of pairs where subject ``i`` is known to fail first.

    ``i`` has an observed event and either ``t_i < t_j``, or ``t_i == t_j``
    with ``j`` censored.
    """
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=bool)
    ti = time[:, None]
    tj = time[None, :]
    ok = event[:, None] & ((ti < tj) | ((ti == tj) & ~event[None, :]))
    return np.nonzero(ok)


def harrell_cindex(risk, time, event) -> float:
    """Fraction of comparable pairs ordered correctly by ``risk``.

    Higher risk should mean earlier failure; ties in risk count one half.
    """
    risk = np.asarray(risk, dtype=np.float64)
    if risk.size < 2:
        raise NoComparablePairsError("need at least 2 subjects")
    i, j = comparable_pairs(time, event)
    if i.size == 0:
        raise NoComparablePairsError("no comparable pairs")
    d = risk[i] - risk[j]
    return float(((d > 0).sum() + 0.5 * (d == 0).sum()) / i.size)


def cindex_columns(X, time=None, event=None, pairs=None, chunk: int = 256) -> np.ndarray:
    """Harrell's C-index of every column of ``X`` used as a risk score."""
    X = np.asarray(X, dtype=np.float64)
    if pairs is None:
        pairs = comparable_pairs(time, event)
    i, j = pairs
    if i.size == 0:
        raise NoComparablePairsError("no comparable pairs")
    out = np.empty(X.shape[1])
    for start in range(0, X.shape[1], chunk):
        cols = X[:, start : start + chunk]
        d = cols[i] - cols[j]
        out[start : start + chunk] = ((d > 0).sum(axis=0) + 0.5 * (d == 0).sum(axis=0)) / i.size
    return out


def fold_cindex(c: float):
    """Fold a C-index into [0.5, 1]; returns ``(folded, negated)``."""
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"C-index must lie in [0, 1], got {c}")
    return (1.0 - c, True) if c < 0.5 else (c, False)
