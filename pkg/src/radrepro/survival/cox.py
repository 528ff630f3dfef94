"""Cox proportional hazards regression with Efron's tie correction.

The negative partial log-likelihood is minimised with damped Newton steps
(step halving until the likelihood does not decrease).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

__all__ = [
    "CoxModel",
    "CollinearityError",
    "efron_loglik",
    "cox_fit",
    "univariate_cox",
]

MAX_ITER = 100
GRAD_TOL = 1e-8
REL_LL_TOL = 1e-10


class CollinearityError(ValueError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


@dataclass(frozen=True)
class CoxModel:
    feature_ids: tuple
    coefficients: np.ndarray
    standard_errors: np.ndarray
    log_likelihood: float
    converged: bool
    n_iter: int = 0
    p_values: np.ndarray = field(default=None)

    def predict_risk(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coefficients


class _RiskSets:
    """Sorting and tie bookkeeping shared by every likelihood evaluation."""

    def __init__(self, time, event):
        time = np.asarray(time, dtype=np.float64)
        event = np.asarray(event, dtype=bool)
        self.order = np.argsort(time, kind="stable")
        ts = time[self.order]
        es = event[self.order]
        ev_times = np.unique(ts[es])
        # first sorted index whose time >= each event time
        self.first = np.searchsorted(ts, ev_times, side="left")
        ev_idx = np.flatnonzero(es)
        self.event_idx = ev_idx
        self.event_group = np.searchsorted(ev_times, ts[ev_idx])
        self.n_groups = len(ev_times)
        d = np.bincount(self.event_group, minlength=self.n_groups)
        self.rep = np.repeat(np.arange(self.n_groups), d)
        self.frac = np.concatenate([np.arange(k) / k for k in d]) if d.size else np.zeros(0)
        # events are time-sorted, so each tie group is a contiguous block
        self.starts = np.concatenate([[0], np.cumsum(d)[:-1]]).astype(np.intp)


def _revcumsum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


def _terms(Xs, beta, rs: _RiskSets, need_hess=True):
    """Log-likelihood, gradient and Hessian for sorted covariates ``Xs``.

    Under separation the risk-set sums can underflow; the non-finite
    log-likelihood is then rejected by the caller's step halving.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _terms_raw(Xs, beta, rs, need_hess)


def _terms_raw(Xs, beta, rs, need_hess):
    eta = Xs @ beta
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    wx = w[:, None] * Xs
    S0 = _revcumsum(w)[rs.first]
    S1 = _revcumsum(wx)[rs.first]
    ev = rs.event_idx
    g = rs.event_group
    D0 = np.bincount(g, weights=w[ev], minlength=rs.n_groups)
    D1 = np.add.reduceat(wx[ev], rs.starts, axis=0)
    a = rs.frac
    phi = S0[rs.rep] - a * D0[rs.rep]
    Z1 = S1[rs.rep] - a[:, None] * D1[rs.rep]
    loglik = float((eta[ev] - shift).sum() - np.log(phi).sum())
    grad = Xs[ev].sum(axis=0) - (Z1 / phi[:, None]).sum(axis=0)
    if not need_hess:
        return loglik, grad, None
    wxx = wx[:, :, None] * Xs[:, None, :]
    S2 = _revcumsum(wxx)[rs.first]
    D2 = np.add.reduceat(wxx[ev], rs.starts, axis=0)
    Z2 = S2[rs.rep] - a[:, None, None] * D2[rs.rep]
    hess = -(Z2 / phi[:, None, None]).sum(axis=0) + np.einsum("ei,ej->ij", Z1 / phi[:, None], Z1 / phi[:, None])
    return loglik, grad, hess


def efron_loglik(X, time, event, beta, need_hess=True):
    """Efron partial log-likelihood, score and Hessian at ``beta``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64).T).T
    rs = _RiskSets(time, event)
    return _terms(X[rs.order], np.asarray(beta, dtype=np.float64), rs, need_hess)


def _offending_columns(hess, names):
    vals, vecs = np.linalg.eigh(-hess)
    v = vecs[:, 0]
    return [names[k] for k in np.flatnonzero(np.abs(v) > 0.1)]


def cox_fit(X, time, event, feature_ids=None, max_iter: int = MAX_ITER) -> CoxModel:
    """Fit a Cox model by damped Newton iterations.

    ``X`` should be standardized. Converged when the largest absolute
    score component drops below 1e-8 or the relative log-likelihood change
    below 1e-10. Constant or collinear columns raise
    :class:`CollinearityError`; hitting ``max_iter`` returns a model with
    ``converged=False``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    names = list(feature_ids) if feature_ids is not None else [f"x{k}" for k in range(p)]
    if not np.all(np.isfinite(X)):
        raise ValueError("covariates contain missing values")
    const = [names[k] for k in range(p) if np.ptp(X[:, k]) == 0]
    if const:
        raise CollinearityError(f"constant column(s): {', '.join(map(str, const))}", const)
    if not np.any(event):
        raise ValueError("no events")
    rs = _RiskSets(time, event)
    Xs = X[rs.order]
    beta = np.zeros(p)
    ll, grad, hess = _terms(Xs, beta, rs)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < GRAD_TOL:
            converged = True
            break
        try:
            chol = np.linalg.cholesky(-hess)
        except np.linalg.LinAlgError:
            bad = _offending_columns(hess, names)
            raise CollinearityError(f"singular information matrix; collinear columns: {bad}", bad) from None
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        for _ in range(40):
            ll_new, grad_new, hess_new = _terms(Xs, beta + step, rs)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            step /= 2.0
        beta = beta + step
        rel = abs(ll_new - ll) / max(abs(ll), 1e-300)
        ll, grad, hess = ll_new, grad_new, hess_new
        if rel < REL_LL_TOL or np.max(np.abs(grad)) < GRAD_TOL:
            converged = True
            break
    info = -hess
    try:
        cov = np.linalg.inv(info)
        if np.linalg.cond(info) > 1e12:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        bad = _offending_columns(hess, names)
        raise CollinearityError(f"singular information matrix; collinear columns: {bad}", bad) from None
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        pvals = 2 * stats.norm.sf(np.abs(beta / se))
    if not converged:
        logger.debug("Cox fit did not converge after %d iterations", max_iter)
    return CoxModel(tuple(names), beta, se, ll, converged, it, pvals)


def univariate_cox(X, time, event, max_iter: int = 50):
    """Fit a separate one-covariate Cox model to every column of ``X``.

    Vectorized across columns. Returns ``(beta, se, pvalue, converged)``
    arrays; columns whose information vanishes get p = 1.
    """
    X = np.asarray(X, dtype=np.float64)
    n, m = X.shape
    rs = _RiskSets(time, event)
    Xs = X[rs.order]
    ev = rs.event_idx
    a = rs.frac[:, None]
    sum_ev_x = Xs[ev].sum(axis=0)

    def evaluate(beta):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return evaluate_raw(beta)

    def evaluate_raw(beta):
        eta = Xs * beta[None, :]
        shift = eta.max(axis=0)
        w = np.exp(eta - shift[None, :])
        wx = w * Xs
        wxx = wx * Xs
        S = [_revcumsum(v)[rs.first] for v in (w, wx, wxx)]
        D = [np.add.reduceat(v[ev], rs.starts, axis=0) for v in (w, wx, wxx)]
        phi = S[0][rs.rep] - a * D[0][rs.rep]
        z1 = (S[1][rs.rep] - a * D[1][rs.rep]) / phi
        z2 = (S[2][rs.rep] - a * D[2][rs.rep]) / phi
        ll = (eta[ev] - shift[None, :]).sum(axis=0) - np.log(phi).sum(axis=0)
        grad = sum_ev_x - z1.sum(axis=0)
        info = (z2 - z1**2).sum(axis=0)
        return ll, grad, info

    beta = np.zeros(m)
    ll, grad, info = evaluate(beta)
    done = np.zeros(m, dtype=bool)
    for _ in range(max_iter):
        done |= np.abs(grad) < GRAD_TOL
        active = ~done & (info > 1e-12)
        if not active.any():
            break
        step = np.where(active, grad / np.where(info > 1e-12, info, 1.0), 0.0)
        for _ in range(40):
            ll_new, grad_new, info_new = evaluate(beta + step)
            worse = active & ~(ll_new >= ll - 1e-12 * np.abs(ll))
            if not worse.any():
                break
            step = np.where(worse, step / 2.0, step)
        rel = np.abs(ll_new - ll) / np.maximum(np.abs(ll), 1e-300)
        beta = beta + step
        ll, grad, info = ll_new, grad_new, info_new
        done |= active & (rel < REL_LL_TOL)
    converged = done | (np.abs(grad) < GRAD_TOL)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.where(info > 1e-12, 1.0 / np.sqrt(np.where(info > 1e-12, info, 1.0)), np.inf)
        p = np.where(np.isfinite(se), 2 * stats.norm.sf(np.abs(beta / se)), 1.0)
    return beta, se, p, converged
