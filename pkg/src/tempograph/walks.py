"""Temporal walks with a learnable restart, plus the set encoder.

A walk from root u at time t occupies w+1 slots, root first, and moves
strictly backward in time. Candidate edges are weighted by
exp(alpha * (t_cand - t_prev)), max-subtracted, so alpha = 0 is uniform
and larger alpha prefers recent edges. Each walk draws one restart
Bernoulli up front: under the literal sense it restarts iff p > pr, so
pr is the probability of continuing. A triggered restart picks a slot
k ~ U{1..w-1}; slots before k step normally, slot k jumps back to the
root carrying the last real edge time (the query time if none), and
later slots continue strictly before that carried time. Dead ends pad
a sentinel node and freeze the timestamp. Walks shorter than two steps
never restart.

Every walk owns a counter-based RNG stream keyed by (seed, domain,
event index, role, walk index), so results do not depend on sampling
order or thread count, and roles rather than node ids keep the streams
invariant under node relabeling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

SENTINEL = -1

# RNG stream domains
DOMAIN_INIT = 1
DOMAIN_WALKS = 2
DOMAIN_NEGATIVES = 3
DOMAIN_DROPOUT = 4
DOMAIN_NBR_UNIFORM = 5
DOMAIN_INDUCTIVE = 6


def pack_stream(domain: int, event_idx: int, role: int,
                walk_idx: int) -> int:
    if not 0 <= walk_idx < (1 << 20):
        raise ValueError(f"walk_idx out of range: {walk_idx}")
    if not 0 <= role < (1 << 4):
        raise ValueError(f"role out of range: {role}")
    if not 0 <= event_idx < (1 << 32):
        raise ValueError(f"event_idx out of range: {event_idx}")
    if not 0 <= domain < (1 << 8):
        raise ValueError(f"domain out of range: {domain}")
    return (domain << 56) | (event_idx << 24) | (role << 20) | walk_idx


def walk_rng(seed: int, domain: int, event_idx: int, role: int,
             walk_idx: int) -> np.random.Generator:
    pack = pack_stream(domain, event_idx, role, walk_idx)
    key = np.array([seed, pack], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class Walk:
    nodes: np.ndarray      # [w+1] int64, SENTINEL marks padding
    times: np.ndarray      # [w+1] float64
    restart_index: int     # slot of the restart jump, -1 if none


@dataclass
class RestartParams:
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor


def restart_probability(h: ad.Tensor, params: RestartParams) -> ad.Tensor:
    """Per-node continue probability from memory state; [N, 1] in (0, 1)."""
    hid = ad.relu(ad.dense(h, params.w1, params.b1))
    return ad.sigmoid(ad.dense(hid, params.w2, params.b2))


def _pick_candidate(cand_times, t_prev, alpha, rng):
    z = alpha * (cand_times - t_prev)
    z = z - z.max()
    wgt = np.exp(z)
    cum = np.cumsum(wgt)
    r = rng.random() * cum[-1]
    return min(int(np.searchsorted(cum, r, side="right")), len(cum) - 1)


def sample_twr(graph, u, t, w, alpha, pr, rng, restart_sense="literal",
               allow_restart=True) -> Walk:
    nodes = np.full(w + 1, SENTINEL, dtype=np.int64)
    times = np.full(w + 1, float(t))
    nodes[0] = u
    restart_at = -1
    if allow_restart and w >= 2:
        p = rng.random()
        if restart_sense == "literal":
            triggered = p > pr
        elif restart_sense == "inverted":
            triggered = p <= pr
        else:
            raise ValueError(f"unknown restart_sense: {restart_sense}")
        if triggered:
            restart_at = 1 + int(rng.integers(0, w - 1))
    cur, cur_t = int(u), float(t)
    last_real_t = None
    dead = False
    for s in range(1, w + 1):
        if s == restart_at:
            carry = last_real_t if last_real_t is not None else float(t)
            nodes[s] = u
            times[s] = carry
            cur, cur_t, dead = int(u), carry, False
            continue
        if dead:
            times[s] = cur_t
            continue
        adj_t = graph.adj_t[cur]
        hi = int(np.searchsorted(adj_t, cur_t, side="left"))
        if hi == 0:
            dead = True
            times[s] = cur_t
            continue
        pick = _pick_candidate(adj_t[:hi], cur_t, alpha, rng)
        cur = int(graph.adj_nbr[cur][pick])
        cur_t = float(adj_t[pick])
        nodes[s] = cur
        times[s] = cur_t
        last_real_t = cur_t
    return Walk(nodes, times, restart_at)


def sample_walks(graph, roots, ts, prs, w, alpha, M, seed, event_indices,
                 roles, restart_sense="literal", allow_restart=True,
                 workers=1):
    """Sample M walks per root; returns a list of walk lists."""
    def one_root(i):
        return [sample_twr(graph, int(roots[i]), float(ts[i]), w, alpha,
                           float(prs[i]),
                           walk_rng(seed, DOMAIN_WALKS,
                                    int(event_indices[i]), int(roles[i]),
                                    m),
                           restart_sense, allow_restart)
                for m in range(M)]

    idxs = range(len(roots))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one_root, idxs))
    return [one_root(i) for i in idxs]


def positional_frequencies(walks, w):
    """node -> length-(w+1) slot occurrence counts; sentinel excluded."""
    freq = {}
    for walk in walks:
        for s in range(w + 1):
            z = int(walk.nodes[s])
            if z == SENTINEL:
                continue
            if z not in freq:
                freq[z] = np.zeros(w + 1)
            freq[z][s] += 1.0
    return freq


@dataclass
class WalkParams:
    id_w1: ad.Tensor
    id_b1: ad.Tensor
    id_w2: ad.Tensor
    id_b2: ad.Tensor
    gru: ad.GruParams
    attn: ad.AttnParams
    heads: int


def _identity_mlp(mat, wp, train=False, dropout=0.0, rng=None):
    hid = ad.relu(ad.dense(mat, wp.id_w1, wp.id_b1))
    if train:
        hid = ad.dropout(hid, dropout, rng, train=True)
    return ad.dense(hid, wp.id_w2, wp.id_b2)


def encode_identity(freq_u, freq_v, nodes, wp, train=False, dropout=0.0,
                    rng=None):
    """Set-based identities E_z = MLP(v_z(u)) + MLP(v_z(v)); [n, d_v]."""
    w1 = wp.id_w1.data.shape[0]
    zero = np.zeros(w1)
    mu = ad.Tensor(np.stack([freq_u.get(z, zero) for z in nodes]))
    mv = ad.Tensor(np.stack([freq_v.get(z, zero) for z in nodes]))
    return ad.add(_identity_mlp(mu, wp, train, dropout, rng),
                  _identity_mlp(mv, wp, train, dropout, rng))


def encode_walks_batch(pair_sets, wp, phi_omega, phi_bias, w, train=False,
                       dropout=0.0, rng=None):
    """Encode both sides of each pair's walk sets.

    pair_sets: list of (walks_u, walks_v). Returns [2P, d_w] with row
    2p the u side and 2p+1 the v side of pair p.
    """
    if not pair_sets:
        raise ValueError("no pairs to encode")
    m_sizes = {len(s) for pair in pair_sets for s in pair}
    if 0 in m_sizes:
        raise ValueError("each side needs at least one walk")
    if len(m_sizes) != 1:
        raise ValueError("all walk sets must share the same M")
    m = m_sizes.pop()
    d_v = wp.id_w2.data.shape[1]
    slots = w + 1

    # per-pair identity vocabularies, stacked through one shared MLP pass
    vocabs, mats_u, mats_v = [], [], []
    zero = np.zeros(slots)
    for walks_u, walks_v in pair_sets:
        fu = positional_frequencies(walks_u, w)
        fv = positional_frequencies(walks_v, w)
        vocab = sorted(set(fu) | set(fv))
        vocabs.append({z: i for i, z in enumerate(vocab)})
        mats_u.append(np.stack([fu.get(z, zero) for z in vocab]))
        mats_v.append(np.stack([fv.get(z, zero) for z in vocab]))
    mu = ad.Tensor(np.concatenate(mats_u))
    mv = ad.Tensor(np.concatenate(mats_v))
    e_stack = ad.add(_identity_mlp(mu, wp, train, dropout, rng),
                     _identity_mlp(mv, wp, train, dropout, rng))
    # index 0 is the sentinel's all-zero identity row
    e_all = ad.concat([ad.Tensor(np.zeros((1, d_v))), e_stack], axis=0)
    offsets = np.cumsum([1] + [len(v) for v in vocabs])[:-1]

    rows = [(p, side) for p in range(len(pair_sets)) for side in (0, 1)]
    n_rows = len(rows) * m
    idx_mat = np.zeros((n_rows, slots), dtype=np.int64)
    t_mat = np.zeros((n_rows, slots))
    r = 0
    for p, side in rows:
        for walk in pair_sets[p][side]:
            t_mat[r] = walk.times
            for s in range(slots):
                z = int(walk.nodes[s])
                if z != SENTINEL:
                    idx_mat[r, s] = offsets[p] + vocabs[p][z]
            r += 1
    dt_mat = np.zeros_like(t_mat)
    dt_mat[:, 1:] = t_mat[:, :-1] - t_mat[:, 1:]

    h = ad.Tensor(np.zeros((n_rows, d_v)))
    for s in range(slots):
        x = ad.concat([ad.gather_rows(e_all, idx_mat[:, s]),
                       ad.time_encode_learnable(dt_mat[:, s], phi_omega,
                                                phi_bias)], axis=1)
        h = ad.gru_cell(x, h, wp.gru)

    per_root = ad.reshape(h, (len(rows), m, d_v))
    q = ad.mean_axis(per_root, 1)
    out = ad.multi_head_attention_batch(
        q, per_root, per_root, wp.heads, wp.attn,
        mask=np.ones((len(rows), m), dtype=bool))
    if train:
        out = ad.dropout(out, dropout, rng, train=True)
    return out


def format_walk(walk: Walk) -> str:
    parts = []
    for z, t in zip(walk.nodes, walk.times):
        name = "." if int(z) == SENTINEL else str(int(z))
        parts.append(f"{name}@{t:g}")
    return " ".join(parts) + f" | restart={walk.restart_index}"
