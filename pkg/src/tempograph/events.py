"""Event storage: timestamped interaction streams, temporal adjacency,
strictly-causal neighbor queries, chronological splits, inductive masking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Event:
    src: int
    dst: int
    t: float
    edge_feat: np.ndarray
    state_label: int = 0


def load_jodie_csv(path) -> list[Event]:
    """Parse `user,item,timestamp,state_label,f1,...,fd` rows (header line
    first). Item ids are offset by max(user)+1 so the two id spaces are
    disjoint. Events come back stably sorted by timestamp."""
    rows = []
    feat_dim = None
    with open(path) as f:
        header = f.readline()
        if not header:
            raise ValueError("empty file")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 4:
                raise ValueError(
                    f"line {lineno}: expected at least 4 columns, got {len(parts)}")
            try:
                u = int(parts[0])
                i = int(parts[1])
                t = float(parts[2])
                label = int(float(parts[3]))
                feats = [float(x) for x in parts[4:]]
            except ValueError as e:
                raise ValueError(f"line {lineno}: {e}") from None
            if feat_dim is None:
                feat_dim = len(feats)
            elif len(feats) != feat_dim:
                raise ValueError(
                    f"line {lineno}: feature arity {len(feats)} != {feat_dim}")
            rows.append((u, i, t, label, feats))
    if not rows:
        raise ValueError("no event rows")
    offset = max(r[0] for r in rows) + 1
    rows.sort(key=lambda r: r[2])  # stable: ties keep file order
    return [Event(u, i + offset, t, np.array(f, dtype=np.float64), label)
            for u, i, t, label, f in rows]


class TemporalGraph:
    """Columnar event arrays plus per-node adjacency sorted by (t, event
    index). Undirected: each event contributes an entry to both endpoints,
    so adjacency entries total 2 * |events|."""

    def __init__(self, events: list[Event], num_nodes: int,
                 dst_id_start: int | None = None):
        if not events:
            raise ValueError("cannot build a graph from zero events")
        order = sorted(range(len(events)), key=lambda i: events[i].t)
        events = [events[i] for i in order]
        self.events = events
        self.num_nodes = num_nodes
        self.dst_id_start = dst_id_start
        n = len(events)
        self.src = np.fromiter((e.src for e in events), np.int64, n)
        self.dst = np.fromiter((e.dst for e in events), np.int64, n)
        self.t = np.fromiter((e.t for e in events), np.float64, n)
        raw_dim = events[0].edge_feat.size
        self.edge_feat_dim = max(1, raw_dim)
        if raw_dim == 0:
            self.edge_feats = np.zeros((n, 1))
        else:
            self.edge_feats = np.stack([e.edge_feat for e in events])

        nbr = [[] for _ in range(num_nodes)]
        ts = [[] for _ in range(num_nodes)]
        eidx = [[] for _ in range(num_nodes)]
        for i, e in enumerate(events):
            nbr[e.src].append(e.dst)
            ts[e.src].append(e.t)
            eidx[e.src].append(i)
            nbr[e.dst].append(e.src)
            ts[e.dst].append(e.t)
            eidx[e.dst].append(i)
        self.adj_nbr = [np.array(a, dtype=np.int64) for a in nbr]
        self.adj_t = [np.array(a, dtype=np.float64) for a in ts]
        self.adj_eidx = [np.array(a, dtype=np.int64) for a in eidx]

    def degree(self, u: int) -> int:
        return len(self.adj_nbr[u])


def build_graph(events: list[Event], num_nodes: int | None = None,
                dst_id_start: int | None = None) -> TemporalGraph:
    if not events:
        raise ValueError("cannot build a graph from zero events")
    if num_nodes is None:
        num_nodes = 1 + max(max(e.src, e.dst) for e in events)
    return TemporalGraph(events, num_nodes, dst_id_start)


@dataclass
class NeighborSample:
    """Fixed-width neighbor block; mask marks real entries (False = pad)."""
    nodes: np.ndarray
    times: np.ndarray
    eidx: np.ndarray
    mask: np.ndarray


def neighbors_before(graph: TemporalGraph, u: int, t: float, k: int,
                     strategy: str = "recent",
                     rng: np.random.Generator | None = None) -> NeighborSample:
    """Sample from {(v, t_j) : t_j < t} of node u. `recent` takes the k
    latest deterministically; `uniform` draws k with replacement. Results
    ordered ascending by t_j (ties by event index)."""
    ts = graph.adj_t[u]
    end = int(np.searchsorted(ts, t, side="left"))
    nodes = np.zeros(k, dtype=np.int64)
    times = np.full(k, t, dtype=np.float64)
    eidx = np.zeros(k, dtype=np.int64)
    mask = np.zeros(k, dtype=bool)
    if end == 0 or k == 0:
        return NeighborSample(nodes, times, eidx, mask)
    if strategy == "recent":
        take = min(k, end)
        sl = slice(end - take, end)
        nodes[:take] = graph.adj_nbr[u][sl]
        times[:take] = ts[sl]
        eidx[:take] = graph.adj_eidx[u][sl]
        mask[:take] = True
    elif strategy == "uniform":
        if rng is None:
            raise ValueError("uniform strategy needs an rng")
        pick = np.sort(rng.integers(0, end, size=k))
        nodes[:] = graph.adj_nbr[u][pick]
        times[:] = ts[pick]
        eidx[:] = graph.adj_eidx[u][pick]
        mask[:] = True
    else:
        raise ValueError(f"unknown neighbor strategy {strategy!r}")
    return NeighborSample(nodes, times, eidx, mask)


@dataclass(frozen=True)
class SplitSpec:
    n: int
    train_end: int
    val_end: int

    def slices(self, events: list[Event]):
        return (events[:self.train_end],
                events[self.train_end:self.val_end],
                events[self.val_end:])

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump({"n": self.n, "train_end": self.train_end,
                       "val_end": self.val_end}, f)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            d = json.load(f)
        return cls(d["n"], d["train_end"], d["val_end"])


def chrono_split(events: list[Event],
                 ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
                 ) -> SplitSpec:
    """Chronological split by event index. Boundaries: train ends at
    ceil(r_train * n), test starts at n - ceil(r_test * n); an epsilon guard
    keeps float noise (0.7 * 10 = 7.000...001) from moving a boundary."""
    n = len(events)
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    train_end = math.ceil(ratios[0] * n - 1e-9)
    val_end = n - math.ceil(ratios[2] * n - 1e-9)
    if train_end <= 0 or val_end <= train_end or val_end >= n:
        raise ValueError(
            f"degenerate split for n={n}: "
            f"({train_end}, {val_end - train_end}, {n - val_end})")
    return SplitSpec(n=n, train_end=train_end, val_end=val_end)


def mark_inductive_nodes(events: list[Event], split: SplitSpec,
                         fraction: float = 0.1, seed: int = 0
                         ) -> tuple[set[int], list[Event]]:
    """Mask floor(fraction * |val/test nodes|) nodes, drawn without
    replacement from the sorted node list, and drop every training event
    touching a masked node. fraction = 0 masks nothing."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    train = events[:split.train_end]
    eval_events = events[split.train_end:]
    pool = sorted({e.src for e in eval_events} | {e.dst for e in eval_events})
    count = int(math.floor(fraction * len(pool)))
    if count == 0:
        return set(), list(train)
    rng = np.random.default_rng(seed)
    masked = set(int(x) for x in
                 rng.choice(np.array(pool, dtype=np.int64), size=count,
                            replace=False))
    filtered = [e for e in train
                if e.src not in masked and e.dst not in masked]
    return masked, filtered


def inductive_mask_to_json(path, masked: set[int], fraction: float, seed: int):
    with open(path, "w") as f:
        json.dump({"fraction": fraction, "seed": seed,
                   "masked_nodes": sorted(masked)}, f)
