"""Node memory: GRU-updated state vectors driven by interaction messages.

Messages are stashed as a batch streams and applied at the start of the next
batch (two-phase schedule), so predictions for a batch only ever see memory
built from strictly earlier events. Only the latest pending message per node
is applied."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .events import TemporalGraph


class CausalityError(RuntimeError):
    """A message older than a node's last update was applied."""


@dataclass
class PendingEvent:
    partner: int
    t: float
    eidx: int


@dataclass
class MemorySnapshot:
    m: np.ndarray
    last_update: np.ndarray
    pending: dict[int, PendingEvent]


@dataclass
class RawMessage:
    node: int
    t: float
    payload: np.ndarray


class MemoryStore:
    """m[u] is exactly zero until u's first update; last_update starts at
    -inf as the 'never updated' sentinel."""

    def __init__(self, num_nodes: int, d_m: int):
        self.num_nodes = num_nodes
        self.d_m = d_m
        self.m = np.zeros((num_nodes, d_m))
        self.last_update = np.full(num_nodes, -np.inf)
        self.pending: dict[int, PendingEvent] = {}

    def reset(self):
        self.m[:] = 0.0
        self.last_update[:] = -np.inf
        self.pending.clear()

    def snapshot(self) -> MemorySnapshot:
        return MemorySnapshot(self.m.copy(), self.last_update.copy(),
                              dict(self.pending))

    def restore(self, snap: MemorySnapshot):
        self.m = snap.m.copy()
        self.last_update = snap.last_update.copy()
        self.pending = dict(snap.pending)


class MemoryUpdater:
    """Binds a store to its message time encoder and GRU parameters."""

    def __init__(self, store: MemoryStore, phi_omega: ad.Tensor,
                 phi_bias: ad.Tensor, gru: ad.GruParams):
        self.store = store
        self.phi_omega = phi_omega
        self.phi_bias = phi_bias
        self.gru = gru

    def _delta_t(self, nodes: np.ndarray, ts: np.ndarray) -> np.ndarray:
        last = self.store.last_update[nodes]
        if np.any(ts < last):
            bad = nodes[ts < last][0]
            raise CausalityError(
                f"message for node {bad} at t={ts[ts < last][0]} is older "
                f"than its last update {self.store.last_update[bad]}")
        return np.where(np.isfinite(last), ts - last, 0.0)

    def interaction_messages(self, src: int, dst: int, t: float,
                             edge_feat: np.ndarray) -> list[RawMessage]:
        """Payloads [m_node || m_partner || phi1(dt) || e] for both endpoints,
        computed against the store's current state."""
        out = []
        for node, partner in ((src, dst), (dst, src)):
            dt = self._delta_t(np.array([node]), np.array([t]))[0]
            phi = np.cos(self.phi_omega.data * dt + self.phi_bias.data)
            payload = np.concatenate([
                self.store.m[node], self.store.m[partner], phi,
                np.asarray(edge_feat, dtype=np.float64)])
            out.append(RawMessage(node=node, t=t, payload=payload))
        return out

    def apply(self, messages: list[RawMessage]):
        """Keep the latest message per node, run the GRU, write back."""
        if not messages:
            return
        latest: dict[int, RawMessage] = {}
        for msg in messages:
            cur = latest.get(msg.node)
            if cur is None or msg.t >= cur.t:
                latest[msg.node] = msg
        nodes = np.array(sorted(latest), dtype=np.int64)
        ts = np.array([latest[n].t for n in nodes])
        last = self.store.last_update[nodes]
        if np.any(ts < last):
            bad = int(nodes[ts < last][0])
            raise CausalityError(
                f"message for node {bad} is older than its last update")
        payloads = np.stack([latest[n].payload for n in nodes])
        h = ad.Tensor(self.store.m[nodes])
        new = ad.gru_cell(ad.Tensor(payloads), h, self.gru)
        self.store.m[nodes] = new.data
        self.store.last_update[nodes] = ts

    def stash(self, src: int, dst: int, t: float, eidx: int):
        """Record an event for the next flush; keep-latest per node."""
        for node, partner in ((src, dst), (dst, src)):
            cur = self.store.pending.get(node)
            if cur is None or t >= cur.t:
                self.store.pending[node] = PendingEvent(partner, t, eidx)

    def flush(self, graph: TemporalGraph) -> ad.Tensor:
        """Apply all pending messages inside the active tape (if any) and
        return the full memory as a tensor for downstream gathers. Commits
        the updated values to the store and clears the pending buffer."""
        base = ad.Tensor(self.store.m.copy())
        if not self.store.pending:
            return base
        nodes = np.array(sorted(self.store.pending), dtype=np.int64)
        partners = np.array(
            [self.store.pending[n].partner for n in nodes], dtype=np.int64)
        ts = np.array([self.store.pending[n].t for n in nodes])
        eidx = np.array([self.store.pending[n].eidx for n in nodes],
                        dtype=np.int64)
        dt = self._delta_t(nodes, ts)

        m_nodes = ad.gather_rows(base, nodes)
        m_partners = ad.gather_rows(base, partners)
        phi = ad.time_encode_learnable(dt, self.phi_omega, self.phi_bias)
        efeat = ad.Tensor(graph.edge_feats[eidx])
        payload = ad.concat([m_nodes, m_partners, phi, efeat], axis=1)
        new_rows = ad.gru_cell(payload, m_nodes, self.gru)
        mem = ad.scatter_rows(base, nodes, new_rows)

        self.store.m = mem.data.copy()
        self.store.last_update[nodes] = ts
        self.store.pending.clear()
        return mem
