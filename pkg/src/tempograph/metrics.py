"""Ranking metrics with explicit tie handling.

Average precision walks the descending-score ranking one distinct score
at a time, so a block of tied scores contributes a single precision
step; this matches the reference implementations behind published
baseline numbers and gives neither class an ordering advantage inside a
tie. AUC uses the Mann-Whitney statistic with average ranks, giving
ties half credit. Both reject degenerate label vectors instead of
returning a silent default.
"""

from __future__ import annotations

import numpy as np
from scipy import stats


def average_precision(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(labels[order])
    rank = np.arange(1, len(s) + 1)
    last = np.r_[s[1:] != s[:-1], True]       # last index of each block
    d_tp = np.diff(np.r_[0, tp[last]])
    prec = tp[last] / rank[last]
    return float((d_tp * prec).sum() / n_pos)


def auc_roc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes present")
    ranks = stats.rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def spearman_rho(a, b) -> tuple[float, float]:
    """Rank correlation with average ranks and the t-approximation
    two-sided p-value."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if len(a) != len(b) or len(a) < 3:
        raise ValueError("need two equal-length vectors of at least 3")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ValueError("rank correlation undefined for constant input")
    ra = stats.rankdata(a, method="average")
    rb = stats.rankdata(b, method="average")
    rho = float(np.corrcoef(ra, rb)[0, 1])
    n = len(a)
    denom = 1.0 - rho * rho
    if denom <= 1e-15:
        return rho, 0.0
    t = rho * np.sqrt((n - 2) / denom)
    return rho, float(2.0 * stats.t.sf(abs(t), n - 2))
