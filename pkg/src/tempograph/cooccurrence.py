"""Neighbor co-occurrence features for a candidate pair.

For a pair (u, v) queried at time t, each node's window is its r most
recent neighbor occurrences strictly before t (ascending, with
multiplicity). Every window entry z becomes a row (count of z in own
window, count of z in partner window); short windows zero-pad. Rows are
encoded by a shared scalar MLP applied to each column and summed, which
makes the encoding invariant to swapping the two count columns.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import events as ev


@dataclass
class CoocParams:
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor


def _window(graph, u, t, r):
    s = ev.neighbors_before(graph, u, t, r, "recent")
    return [int(n) for n, m in zip(s.nodes, s.mask) if m]


def build_cooccurrence(graph, u, v, t, r):
    """Count matrices (nc_u, nc_v), each [r, 2] float64."""
    wu = _window(graph, u, t, r)
    wv = _window(graph, v, t, r)
    cu = Counter(wu)
    cv = Counter(wv)
    nc_u = np.zeros((r, 2))
    nc_v = np.zeros((r, 2))
    for i, z in enumerate(wu):
        nc_u[i, 0] = cu[z]
        nc_u[i, 1] = cv[z]
    for i, z in enumerate(wv):
        nc_v[i, 0] = cv[z]
        nc_v[i, 1] = cu[z]
    return nc_u, nc_v


def build_cooccurrence_batch(graph, us, vs, ts, r):
    """Stacked counts for pairs: returns (counts_u, counts_v), [N, r, 2]."""
    n = len(us)
    counts_u = np.zeros((n, r, 2))
    counts_v = np.zeros((n, r, 2))
    for i in range(n):
        counts_u[i], counts_v[i] = build_cooccurrence(
            graph, int(us[i]), int(vs[i]), float(ts[i]), r)
    return counts_u, counts_v


def encode_cooccurrence_batch(counts, params, dropout=0.0, rng=None,
                              train=False):
    """Encode [N, r, 2] counts to [N, r*d_ce] with the shared column MLP."""
    n, r, _ = counts.shape

    def branch(col):
        x = ad.Tensor(counts[:, :, col].reshape(n * r, 1))
        hid = ad.relu(ad.dense(x, params.w1, params.b1))
        if train:
            hid = ad.dropout(hid, dropout, rng, train=True)
        return ad.dense(hid, params.w2, params.b2)

    summed = ad.add(branch(0), branch(1))
    d_ce = summed.data.shape[1]
    return ad.reshape(summed, (n, r * d_ce))
