"""Scalar evaluation metrics: RMSE in days, thresholded binary metrics, C-index."""
from __future__ import annotations

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric has no value on this input (e.g. a single class)."""


def rmse_days(predictions, labels, censored=None) -> float:
    """Root mean squared error over uncensored individuals."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch {p.shape} vs {y.shape}")
    keep = np.ones(p.shape, bool) if censored is None else ~np.asarray(censored, bool)
    if not keep.any():
        raise UndefinedMetricError("no uncensored individuals")
    d = p[keep] - y[keep]
    return float(np.sqrt(np.mean(d * d)))


def threshold_binarize(predicted_day, last_obs_day):
    """Positive (True) iff the predicted event day is on or before the last observation."""
    p = np.asarray(predicted_day, dtype=np.float64)
    out = p <= np.asarray(last_obs_day, dtype=np.float64)
    return bool(out) if out.ndim == 0 else out


def auc(scores, labels) -> float:
    """Area under the ROC curve as the normalised Mann-Whitney U (ties count 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size)
    sorted_s = s[order]
    # average ranks over tie groups
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b - 1) + 1.0
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1(predictions, labels) -> float:
    p = np.asarray(predictions).astype(bool)
    y = np.asarray(labels).astype(bool)
    tp = np.sum(p & y)
    fp = np.sum(p & ~y)
    fn = np.sum(~p & y)
    if tp == 0:
        return 0.0
    return float(2 * tp / (2 * tp + fp + fn))


def c_index(predicted_times, durations, events, chunk=2048) -> float:
    """Harrell's concordance with predicted event times (earlier = higher risk).

    A pair (i, j) is comparable when i had the event and either
    ``T_i < T_j`` or ``T_i == T_j`` with j censored.  It is concordant when
    ``pred_i < pred_j``; prediction ties count 1/2.
    """
    p = np.asarray(predicted_times, dtype=np.float64)
    d = np.asarray(durations, dtype=np.float64)
    e = np.asarray(events).astype(bool)
    if not (p.shape == d.shape == e.shape):
        raise ValueError("length mismatch")
    num = 0.0
    den = 0.0
    idx = np.flatnonzero(e)
    for start in range(0, idx.size, chunk):
        i = idx[start:start + chunk]
        di = d[i][:, None]
        comparable = (di < d[None, :]) | ((di == d[None, :]) & ~e[None, :])
        pi = p[i][:, None]
        conc = np.where(pi < p[None, :], 1.0, np.where(pi == p[None, :], 0.5, 0.0))
        num += float(np.sum(conc * comparable))
        den += float(np.sum(comparable))
    if den == 0:
        raise UndefinedMetricError("no comparable pairs")
    return num / den
