"""Parameter construction and the pair-conditioned embedding assembly.

A node's final embedding at query time concatenates four blocks: the
attention-refined memory state, the encoded co-occurrence counts, the
walk-set encoding, and the scalar continue probability. Ablation flags
zero individual blocks without changing the width, so downstream heads
keep their shapes. Weights start uniform in +-1/sqrt(fan_in), biases at
zero, and both time-encoding frequency vectors start on the same
geometric ladder; only the learnable one trains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attention_embedding as mae
from . import autodiff as ad
from . import cooccurrence as co
from . import walks as wk


@dataclass
class ModelDims:
    d_m: int
    d_e: int
    d_phi1: int
    d_phi2: int
    d_ce: int
    r: int
    w: int
    d_v: int
    d_w: int
    mae_layers: int
    mae_heads: int
    walk_heads: int
    k: int
    n_classes: int


@dataclass
class AblationFlags:
    no_mae: bool = False
    no_nce: bool = False
    no_walks: bool = False
    no_restart: bool = False


@dataclass
class HeadParams:
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor


@dataclass
class ModelHandles:
    phi1_omega: ad.Tensor
    phi1_bias: ad.Tensor
    phi2_omega: ad.Tensor
    memory_gru: ad.GruParams
    mae_layers: list
    nce: co.CoocParams
    restart: wk.RestartParams
    walk: wk.WalkParams
    link: HeadParams
    node: HeadParams


def embedding_width(dims: ModelDims) -> int:
    return dims.d_m + dims.r * dims.d_ce + dims.d_w + 1


def build_parameters(dims: ModelDims, seed: int):
    """Create every named parameter; returns (ParamGroup, ModelHandles)."""
    params = ad.ParamGroup()
    rng = wk.walk_rng(seed, wk.DOMAIN_INIT, 0, 0, 0)

    def w(name, shape):
        return params.add(name, ad.uniform_init(rng, shape, shape[0])).tensor

    def b(name, dim):
        return params.add(name, np.zeros(dim)).tensor

    def gru(prefix, d_in, d_h):
        return ad.GruParams(
            w_z=w(f"{prefix}.w_z", (d_in + d_h, d_h)),
            b_z=b(f"{prefix}.b_z", d_h),
            w_r=w(f"{prefix}.w_r", (d_in + d_h, d_h)),
            b_r=b(f"{prefix}.b_r", d_h),
            w_c=w(f"{prefix}.w_c", (d_in + d_h, d_h)),
            b_c=b(f"{prefix}.b_c", d_h))

    def head(prefix, d_in, d_hid, d_out):
        return HeadParams(w1=w(f"{prefix}.w1", (d_in, d_hid)),
                          b1=b(f"{prefix}.b1", d_hid),
                          w2=w(f"{prefix}.w2", (d_hid, d_out)),
                          b2=b(f"{prefix}.b2", d_out))

    phi1_omega = params.add("phi1.omega",
                            ad.fixed_time_ladder(dims.d_phi1)).tensor
    phi1_bias = b("phi1.bias", dims.d_phi1)
    phi2_omega = params.add("phi2.omega", ad.fixed_time_ladder(dims.d_phi2),
                            frozen=True).tensor

    d_msg = 2 * dims.d_m + dims.d_phi1 + dims.d_e
    memory_gru = gru("memory_gru", d_msg, dims.d_m)

    d_q = dims.d_m + dims.d_phi1 + dims.d_phi2
    d_kv = dims.d_m + dims.d_e + dims.d_phi1 + dims.d_phi2
    layers = []
    for li in range(dims.mae_layers):
        attn = ad.AttnParams(
            w_q=w(f"mae.l{li}.attn.w_q", (d_q, dims.d_m)),
            w_k=w(f"mae.l{li}.attn.w_k", (d_kv, dims.d_m)),
            w_v=w(f"mae.l{li}.attn.w_v", (d_kv, dims.d_m)),
            w_o=w(f"mae.l{li}.attn.w_o", (dims.d_m, dims.d_m)))
        layers.append(mae.MaeLayerParams(
            attn=attn,
            w1=w(f"mae.l{li}.mlp.w1", (2 * dims.d_m, dims.d_m)),
            b1=b(f"mae.l{li}.mlp.b1", dims.d_m),
            w2=w(f"mae.l{li}.mlp.w2", (dims.d_m, dims.d_m)),
            b2=b(f"mae.l{li}.mlp.b2", dims.d_m)))

    nce = co.CoocParams(w1=w("nce.w1", (1, dims.d_ce)),
                        b1=b("nce.b1", dims.d_ce),
                        w2=w("nce.w2", (dims.d_ce, dims.d_ce)),
                        b2=b("nce.b2", dims.d_ce))

    rh = head("restart", dims.d_m, dims.d_m, 1)
    restart = wk.RestartParams(w1=rh.w1, b1=rh.b1, w2=rh.w2, b2=rh.b2)

    walk = wk.WalkParams(
        id_w1=w("walk.id.w1", (dims.w + 1, dims.d_v)),
        id_b1=b("walk.id.b1", dims.d_v),
        id_w2=w("walk.id.w2", (dims.d_v, dims.d_v)),
        id_b2=b("walk.id.b2", dims.d_v),
        gru=gru("walk.gru", dims.d_v + dims.d_phi1, dims.d_v),
        attn=ad.AttnParams(
            w_q=w("walk.attn.w_q", (dims.d_v, dims.d_w)),
            w_k=w("walk.attn.w_k", (dims.d_v, dims.d_w)),
            w_v=w("walk.attn.w_v", (dims.d_v, dims.d_w)),
            w_o=w("walk.attn.w_o", (dims.d_w, dims.d_w))),
        heads=dims.walk_heads)

    d_emb = embedding_width(dims)
    link = head("link", 2 * d_emb, d_emb, 1)
    node = head("node", d_emb, d_emb, dims.n_classes)

    handles = ModelHandles(
        phi1_omega=phi1_omega, phi1_bias=phi1_bias, phi2_omega=phi2_omega,
        memory_gru=memory_gru, mae_layers=layers, nce=nce, restart=restart,
        walk=walk, link=link, node=node)
    return params, handles


def final_embedding(h, ce, wenc, pr, flags: AblationFlags) -> ad.Tensor:
    """[h || ce || walk enc || pr], with flagged blocks zeroed."""
    n = h.data.shape[0]

    def gate(x, off):
        return ad.Tensor(np.zeros((n, x.data.shape[1]))) if off else x

    return ad.concat([gate(h, flags.no_mae), gate(ce, flags.no_nce),
                      gate(wenc, flags.no_walks),
                      gate(pr, flags.no_restart)], axis=1)


def predict_link(emb_u, emb_v, head: HeadParams, train=False, dropout=0.0,
                 rng=None) -> ad.Tensor:
    x = ad.concat([emb_u, emb_v], axis=1)
    hid = ad.relu(ad.dense(x, head.w1, head.b1))
    if train:
        hid = ad.dropout(hid, dropout, rng, train=True)
    return ad.sigmoid(ad.dense(hid, head.w2, head.b2))


def predict_node_label(emb, head: HeadParams, train=False, dropout=0.0,
                       rng=None) -> ad.Tensor:
    hid = ad.relu(ad.dense(emb, head.w1, head.b1))
    if train:
        hid = ad.dropout(hid, dropout, rng, train=True)
    return ad.softmax(ad.dense(hid, head.w2, head.b2), axis=1)


def degree_based_pr(graph, nodes) -> np.ndarray:
    """Static continue probability 1 - deg(u)/max_deg."""
    max_deg = max((len(ts) for ts in graph.adj_t), default=0)
    if max_deg == 0:
        return np.zeros(len(nodes))
    degs = np.array([len(graph.adj_t[int(u)]) for u in nodes], dtype=float)
    return 1.0 - degs / max_deg
