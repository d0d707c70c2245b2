"""Synthetic event streams with known structure.

The periodic stream is a bipartite schedule where every user cycles
between two home items forever, so a model only has to memorize the
pairings. The community stream mixes a repeated within-community ring
with novel within-community pairs that never repeat; a pure pair
memorizer scores nothing on the novel part, while co-occurrence
structure identifies the community.
"""

from __future__ import annotations

import numpy as np

from . import events as ev


def periodic_bipartite(n_events=10000, n_users=20, n_items=20,
                       period_offset=7):
    """User s%n_users alternates between its two home items; t = s."""
    evs = []
    for s in range(n_events):
        u = s % n_users
        visit = s // n_users
        hop = period_offset if visit % 2 == 0 else 2 * period_offset
        item = n_users + (u + hop) % n_items
        evs.append(ev.Event(u, item, float(s), np.zeros(0)))
    return evs, n_users + n_items, n_users


def labeled_periodic(n_events=10000, n_users=20, n_items=20,
                     period_offset=7):
    """Periodic stream with a parity state label on the source user."""
    evs, num_nodes, dst_start = periodic_bipartite(
        n_events, n_users, n_items, period_offset)
    evs = [ev.Event(e.src, e.dst, e.t, e.edge_feat, e.src % 2)
           for e in evs]
    return evs, num_nodes, dst_start


def community_stream(n_events=6000, n_nodes=160, n_communities=4,
                     ring_fraction=0.7, seed=0):
    """Ring edges repeat forever; novel pairs appear exactly once."""
    if n_nodes % n_communities != 0:
        raise ValueError("communities must divide the node count")
    size = n_nodes // n_communities
    rng = np.random.default_rng(seed)
    used = set()
    evs = []
    for s in range(n_events):
        c = int(rng.integers(0, n_communities))
        base = c * size
        if rng.random() < ring_fraction:
            i = int(rng.integers(0, size))
            j = (i + 1) % size
            a, b = base + min(i, j), base + max(i, j)
        else:
            for _ in range(200):
                i, j = rng.integers(0, size, size=2)
                if i == j or (i + 1) % size == j or (j + 1) % size == i:
                    continue
                a, b = base + int(min(i, j)), base + int(max(i, j))
                if (a, b) not in used:
                    used.add((a, b))
                    break
            else:
                i = int(rng.integers(0, size))
                j = (i + 1) % size
                a, b = base + min(i, j), base + max(i, j)
        evs.append(ev.Event(a, b, float(s), np.zeros(0)))
    return evs, n_nodes, None
