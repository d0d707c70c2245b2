"""Temporal attention over recent neighbors, seeded from node memory.

Each query (u, t) attends over its k most recent (or uniformly sampled)
neighbors strictly before t. Key/value rows carry the neighbor state, the
edge features, and two time encodings of the gap; the attended summary is
combined with the node's own state by a two-layer MLP. Stacking layers
recomputes neighbor states one level down, always at the root query time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import events as ev


@dataclass
class MaeLayerParams:
    attn: ad.AttnParams
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor


@dataclass
class NeighborBlock:
    """Stacked neighbor samples for a batch of queries, each [N, k]."""

    nodes: np.ndarray
    times: np.ndarray
    eidx: np.ndarray
    mask: np.ndarray


class AttentionEmbedder:
    def __init__(self, graph, d_m, d_phi1, d_phi2, k, heads, layers,
                 neighbor_strategy, dropout, phi_omega, phi_bias,
                 layer_params, node_feats=None):
        if d_m % heads != 0:
            raise ValueError(f"d_m={d_m} not divisible by heads={heads}")
        if len(layer_params) != layers:
            raise ValueError("need one parameter set per layer")
        self.graph = graph
        self.d_m = d_m
        self.d_phi1 = d_phi1
        self.d_phi2 = d_phi2
        self.k = k
        self.heads = heads
        self.layers = layers
        self.neighbor_strategy = neighbor_strategy
        self.dropout = dropout
        self.phi_omega = phi_omega
        self.phi_bias = phi_bias
        self.layer_params = layer_params
        self.node_feats = node_feats

    def sample_neighbors(self, nodes, ts, nbr_rng=None):
        if self.neighbor_strategy == "uniform" and nbr_rng is None:
            raise ValueError("uniform neighbor sampling needs an rng")
        rows = [ev.neighbors_before(self.graph, int(u), float(t), self.k,
                                    self.neighbor_strategy, rng=nbr_rng)
                for u, t in zip(nodes, ts)]
        return NeighborBlock(
            nodes=np.stack([r.nodes for r in rows]),
            times=np.stack([r.times for r in rows]),
            eidx=np.stack([r.eidx for r in rows]),
            mask=np.stack([r.mask for r in rows]))

    def _base_state(self, mem, nodes):
        h = ad.gather_rows(mem, nodes)
        if self.node_feats is not None:
            h = ad.add(h, ad.Tensor(self.node_feats[nodes]))
        return h

    def assemble_neighbor_rows(self, mem, nodes, ts, samples=None,
                               h_self=None, h_nbr=None, nbr_rng=None):
        """Build (query, key/value, mask) tensors for one attention layer.

        h_self/h_nbr default to raw memory state; deeper layers pass their
        own recursive embeddings instead.
        """
        block = samples if samples is not None else \
            self.sample_neighbors(nodes, ts, nbr_rng)
        n = len(nodes)
        flat_nodes = block.nodes.reshape(-1)
        if h_self is None:
            h_self = self._base_state(mem, nodes)
        if h_nbr is None:
            h_nbr = self._base_state(mem, flat_nodes)
        efeat = ad.Tensor(self.graph.edge_feats[block.eidx.reshape(-1)])
        dt = np.repeat(np.asarray(ts, dtype=np.float64), self.k) \
            - block.times.reshape(-1)
        p1 = ad.time_encode_learnable(dt, self.phi_omega, self.phi_bias)
        p2 = ad.time_encode_fixed(dt, self.d_phi2)
        k_flat = ad.concat([h_nbr, efeat, p1, p2], axis=1)
        d_kv = k_flat.data.shape[1]
        k_t = ad.reshape(k_flat, (n, self.k, d_kv))
        zero_dt = np.zeros(n)
        q = ad.concat([h_self,
                       ad.time_encode_learnable(zero_dt, self.phi_omega,
                                                self.phi_bias),
                       ad.time_encode_fixed(zero_dt, self.d_phi2)], axis=1)
        return q, k_t, block.mask

    def _layer(self, level, mem, nodes, ts, train, drop_rng, nbr_rng,
               samples):
        if level == 0:
            return self._base_state(mem, nodes)
        # collapse duplicate (node, t) queries before recursing
        pairs = np.stack([np.asarray(nodes, dtype=np.float64),
                          np.asarray(ts, dtype=np.float64)], axis=1)
        uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
        u_nodes = uniq[:, 0].astype(np.int64)
        u_ts = uniq[:, 1]
        if samples is not None and len(u_nodes) != len(nodes):
            raise ValueError("precomputed samples require unique queries")
        block = samples if samples is not None else \
            self.sample_neighbors(u_nodes, u_ts, nbr_rng)
        h_self = self._layer(level - 1, mem, u_nodes, u_ts, train,
                             drop_rng, nbr_rng, None)
        h_nbr = self._layer(level - 1, mem, block.nodes.reshape(-1),
                            np.repeat(u_ts, self.k), train, drop_rng, None
                            if nbr_rng is None else nbr_rng, None)
        q, k_t, mask = self.assemble_neighbor_rows(
            mem, u_nodes, u_ts, samples=block, h_self=h_self, h_nbr=h_nbr)
        lp = self.layer_params[level - 1]
        h_tilde = ad.multi_head_attention_batch(q, k_t, k_t, self.heads,
                                                lp.attn, mask=mask)
        if train:
            h_tilde = ad.dropout(h_tilde, self.dropout, drop_rng, train=True)
        cat = ad.concat([h_self, h_tilde], axis=1)
        hid = ad.relu(ad.dense(cat, lp.w1, lp.b1))
        if train:
            hid = ad.dropout(hid, self.dropout, drop_rng, train=True)
        out = ad.dense(hid, lp.w2, lp.b2)
        return ad.gather_rows(out, inv) if len(u_nodes) != len(nodes) else out

    def embed(self, mem, nodes, ts, train=False, drop_rng=None,
              nbr_rng=None, samples=None):
        """Embed each (nodes[i], ts[i]) query; returns [N, d_m]."""
        nodes = np.asarray(nodes, dtype=np.int64)
        ts = np.asarray(ts, dtype=np.float64)
        if train and self.dropout > 0 and drop_rng is None:
            raise ValueError("training with dropout needs drop_rng")
        return self._layer(self.layers, mem, nodes, ts, train, drop_rng,
                           nbr_rng, samples)
