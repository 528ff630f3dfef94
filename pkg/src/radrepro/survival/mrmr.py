"""Greedy minimum-redundancy maximum-relevance feature selection."""
from __future__ import annotations

import numpy as np

__all__ = ["mrmr_select", "abs_correlation"]


def abs_correlation(X) -> np.ndarray:
    """Absolute Pearson correlation between columns; zero-variance pairs give 0."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    norm = np.sqrt((Xc**2).sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        Z = Xc / norm
        R = np.abs(Z.T @ Z)
    R[~np.isfinite(R)] = 0.0
    return np.clip(R, 0.0, 1.0)


def mrmr_select(X, relevance, k: int, feature_ids=None) -> list:
    """Select up to ``k`` columns of ``X`` greedily.

    The first pick maximizes relevance; each later pick maximizes
    relevance minus the mean absolute Pearson correlation with the features
    already chosen. Ties go to the higher relevance, then to the
    lexicographically smaller feature id.

    Parameters
    ----------
    X : array (n_samples, n_features)
    relevance : array (n_features,)
    k : int
        Number of features wanted, at least 1.
    feature_ids : sequence, optional
        Column identifiers used for tie-breaking and returned in the
        result. Defaults to column indices.

    Returns
    -------
    list
        Selected ids in pick order, ``min(k, n_features)`` long.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    rel = np.asarray(relevance, dtype=np.float64)
    m = X.shape[1]
    if m == 0:
        raise ValueError("no candidate features")
    if rel.shape != (m,):
        raise ValueError("relevance length does not match the number of columns")
    ids = list(range(m)) if feature_ids is None else list(feature_ids)
    # lexicographic rank of each id, for the final tie-break
    lex = np.empty(m, dtype=np.int64)
    lex[sorted(range(m), key=lambda c: ids[c])] = np.arange(m)
    R = abs_correlation(X)

    chosen = []
    remaining = np.ones(m, dtype=bool)
    redundancy = np.zeros(m)
    for step in range(min(k, m)):
        score = rel - (redundancy / step if step else 0.0)
        cand = np.flatnonzero(remaining)
        best = min(cand, key=lambda c: (-score[c], -rel[c], lex[c]))
        chosen.append(best)
        remaining[best] = False
        redundancy += R[:, best]
    return [ids[c] for c in chosen]
