"""Chronological training and evaluation of the link/node models.

The stream is split 70/15/15 by time. Each epoch resets node memory,
walks the training span in order, and then scores the validation span;
the epoch with the lowest validation loss wins, and its parameters plus
its post-validation memory snapshot are restored before the single test
pass. Within a batch the pending messages from the previous batch are
flushed first (inside the tape, so the memory GRU trains), embeddings
and pair scores are computed, and the batch's own events are stashed
for the next flush. Evaluation replays every event through memory but
only scores the requested subset, which is how the inductive setting
restricts metrics to masked-node events.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attention_embedding as mae
from . import autodiff as ad
from . import cooccurrence as co
from . import edgebank as eb
from . import events as ev
from . import metrics as mt
from . import model as md
from . import negatives as ng
from . import synthetic as sy
from . import walks as wk


class NonFiniteLossError(RuntimeError):
    pass


def load_dataset(cfg):
    """Returns (events, num_nodes, dst_id_start)."""
    if cfg.dataset == "synthetic-periodic":
        return sy.periodic_bipartite(cfg.synthetic_events)
    if cfg.dataset == "synthetic-community":
        return sy.community_stream(cfg.synthetic_events, seed=cfg.seed)
    if cfg.dataset == "synthetic-labeled":
        return sy.labeled_periodic(cfg.synthetic_events)
    path = cfg.dataset_path
    if not path:
        root = os.environ.get("TEMPOGRAPH_DATA", "")
        if not root:
            raise FileNotFoundError(
                f"dataset {cfg.dataset!r} needs dataset_path or "
                "TEMPOGRAPH_DATA")
        path = str(Path(root) / f"{cfg.dataset}.csv")
    evs = ev.load_jodie_csv(path)
    num_nodes = 1 + max(max(e.src, e.dst) for e in evs)
    dst_id_start = 1 + max(e.src for e in evs)
    return evs, num_nodes, dst_id_start


@dataclass
class Components:
    cfg: object
    dims: md.ModelDims
    params: ad.ParamGroup
    handles: md.ModelHandles
    store: object
    updater: object
    full_graph: ev.TemporalGraph
    train_graph: ev.TemporalGraph
    embedder_train: mae.AttentionEmbedder
    embedder_eval: mae.AttentionEmbedder
    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    labels: np.ndarray
    num_nodes: int
    dst_id_start: int | None
    split: ev.SplitSpec
    train_idx: np.ndarray
    masked_nodes: set


def build_components(cfg, events, num_nodes, dst_id_start) -> Components:
    from . import memory as mem

    split = ev.chrono_split(events)
    full_graph = ev.build_graph(events, num_nodes=num_nodes,
                                dst_id_start=dst_id_start)
    masked = set()
    train_idx = np.arange(split.train_end)
    if cfg.setting == "inductive":
        masked, _ = ev.mark_inductive_nodes(events, split,
                                            cfg.inductive_fraction,
                                            cfg.seed)
        train_idx = np.array(
            [i for i in range(split.train_end)
             if events[i].src not in masked and events[i].dst not in masked],
            dtype=np.int64)
        train_graph = ev.build_graph([events[i] for i in train_idx],
                                     num_nodes=num_nodes,
                                     dst_id_start=dst_id_start)
    else:
        train_graph = full_graph

    dims = md.ModelDims(
        d_m=cfg.d_m, d_e=full_graph.edge_feat_dim, d_phi1=cfg.d_phi1,
        d_phi2=cfg.d_phi2, d_ce=cfg.d_ce, r=cfg.r, w=cfg.w, d_v=cfg.d_v,
        d_w=cfg.d_w, mae_layers=cfg.mae_layers, mae_heads=cfg.mae_heads,
        walk_heads=cfg.walk_heads, k=cfg.k, n_classes=2)
    params, handles = md.build_parameters(dims, cfg.seed)
    store = mem.MemoryStore(num_nodes, cfg.d_m)
    updater = mem.MemoryUpdater(store, handles.phi1_omega,
                                handles.phi1_bias, handles.memory_gru)

    def embedder(graph):
        return mae.AttentionEmbedder(
            graph=graph, d_m=cfg.d_m, d_phi1=cfg.d_phi1, d_phi2=cfg.d_phi2,
            k=cfg.k, heads=cfg.mae_heads, layers=cfg.mae_layers,
            neighbor_strategy=cfg.neighbor_strategy, dropout=cfg.dropout,
            phi_omega=handles.phi1_omega, phi_bias=handles.phi1_bias,
            layer_params=handles.mae_layers)

    return Components(
        cfg=cfg, dims=dims, params=params, handles=handles, store=store,
        updater=updater, full_graph=full_graph, train_graph=train_graph,
        embedder_train=embedder(train_graph),
        embedder_eval=embedder(full_graph),
        src=np.array([e.src for e in events], dtype=np.int64),
        dst=np.array([e.dst for e in events], dtype=np.int64),
        t=np.array([e.t for e in events]),
        labels=np.array([e.state_label for e in events], dtype=np.int64),
        num_nodes=num_nodes, dst_id_start=dst_id_start, split=split,
        train_idx=train_idx, masked_nodes=masked)


def _continue_probs(comp, graph, h_all, nodes):
    cfg = comp.cfg
    if cfg.restart_mode == "learnable":
        return wk.restart_probability(h_all, comp.handles.restart)
    if cfg.restart_mode == "degree":
        return ad.Tensor(md.degree_based_pr(graph, nodes)[:, None])
    v = cfg.fixed_restart_value()
    return ad.Tensor(np.full((len(nodes), 1), v))


def link_batch(comp, graph, embedder, gsel, neg, train=False,
               drop_rng=None, nbr_rng=None):
    """Flush memory, then score the batch's positives against the given
    negatives. Returns (loss tensor, scores, labels)."""
    cfg, h = comp.cfg, comp.handles
    mem_t = comp.updater.flush(comp.full_graph)
    b = len(gsel)
    src, dst, ts = comp.src[gsel], comp.dst[gsel], comp.t[gsel]
    nodes = np.concatenate([src, dst, neg])
    tq = np.concatenate([ts, ts, ts])

    h_all = embedder.embed(mem_t, nodes, tq, train=train,
                           drop_rng=drop_rng, nbr_rng=nbr_rng)
    pr_all = _continue_probs(comp, graph, h_all, nodes)

    idx_u = np.concatenate([np.arange(b), np.arange(b)])
    idx_v = np.concatenate([np.arange(b, 2 * b), np.arange(2 * b, 3 * b)])

    if cfg.no_walks:
        wenc_u = ad.Tensor(np.zeros((2 * b, cfg.d_w)))
        wenc_v = ad.Tensor(np.zeros((2 * b, cfg.d_w)))
    else:
        sets = wk.sample_walks(
            graph, nodes, tq, pr_all.data[:, 0], w=cfg.w, alpha=cfg.alpha,
            M=cfg.M, seed=cfg.seed, event_indices=np.tile(gsel, 3),
            roles=np.repeat([0, 1, 2], b), restart_sense=cfg.restart_sense,
            allow_restart=not cfg.no_restart, workers=cfg.workers)
        pair_sets = [(sets[i], sets[b + i]) for i in range(b)] \
            + [(sets[i], sets[2 * b + i]) for i in range(b)]
        wenc = wk.encode_walks_batch(pair_sets, h.walk, h.phi1_omega,
                                     h.phi1_bias, w=cfg.w, train=train,
                                     dropout=cfg.dropout, rng=drop_rng)
        wenc_u = ad.gather_rows(wenc, np.arange(0, 4 * b, 2))
        wenc_v = ad.gather_rows(wenc, np.arange(1, 4 * b, 2))

    if cfg.no_nce:
        ce_u = ad.Tensor(np.zeros((2 * b, cfg.r * cfg.d_ce)))
        ce_v = ad.Tensor(np.zeros((2 * b, cfg.r * cfg.d_ce)))
    else:
        cu_pos, cv_pos = co.build_cooccurrence_batch(graph, src, dst, ts,
                                                     cfg.r)
        cu_neg, cv_neg = co.build_cooccurrence_batch(graph, src, neg, ts,
                                                     cfg.r)
        ce_u = co.encode_cooccurrence_batch(
            np.concatenate([cu_pos, cu_neg]), h.nce, cfg.dropout,
            drop_rng, train)
        ce_v = co.encode_cooccurrence_batch(
            np.concatenate([cv_pos, cv_neg]), h.nce, cfg.dropout,
            drop_rng, train)

    flags = md.AblationFlags(no_mae=cfg.no_mae, no_nce=cfg.no_nce,
                             no_walks=cfg.no_walks,
                             no_restart=cfg.no_restart)
    emb_u = md.final_embedding(ad.gather_rows(h_all, idx_u), ce_u, wenc_u,
                               ad.gather_rows(pr_all, idx_u), flags)
    emb_v = md.final_embedding(ad.gather_rows(h_all, idx_v), ce_v, wenc_v,
                               ad.gather_rows(pr_all, idx_v), flags)
    p = md.predict_link(emb_u, emb_v, h.link, train, cfg.dropout, drop_rng)
    y = np.concatenate([np.ones((b, 1)), np.zeros((b, 1))])
    loss = ad.bce_loss(p, y)
    return loss, p.data[:, 0].copy(), y[:, 0].copy()


def node_batch(comp, graph, embedder, gsel, train=False, drop_rng=None,
               nbr_rng=None):
    """State-label prediction for the batch's source nodes."""
    cfg, h = comp.cfg, comp.handles
    mem_t = comp.updater.flush(comp.full_graph)
    b = len(gsel)
    src, dst, ts = comp.src[gsel], comp.dst[gsel], comp.t[gsel]
    labels = comp.labels[gsel]
    nodes = np.concatenate([src, dst])
    tq = np.concatenate([ts, ts])

    h_all = embedder.embed(mem_t, nodes, tq, train=train,
                           drop_rng=drop_rng, nbr_rng=nbr_rng)
    pr_all = _continue_probs(comp, graph, h_all, nodes)

    if cfg.no_walks:
        wenc_u = ad.Tensor(np.zeros((b, cfg.d_w)))
    else:
        sets = wk.sample_walks(
            graph, nodes, tq, pr_all.data[:, 0], w=cfg.w, alpha=cfg.alpha,
            M=cfg.M, seed=cfg.seed, event_indices=np.tile(gsel, 2),
            roles=np.repeat([0, 1], b), restart_sense=cfg.restart_sense,
            allow_restart=not cfg.no_restart, workers=cfg.workers)
        pair_sets = [(sets[i], sets[b + i]) for i in range(b)]
        wenc = wk.encode_walks_batch(pair_sets, h.walk, h.phi1_omega,
                                     h.phi1_bias, w=cfg.w, train=train,
                                     dropout=cfg.dropout, rng=drop_rng)
        wenc_u = ad.gather_rows(wenc, np.arange(0, 2 * b, 2))

    if cfg.no_nce:
        ce_u = ad.Tensor(np.zeros((b, cfg.r * cfg.d_ce)))
    else:
        cu, _ = co.build_cooccurrence_batch(graph, src, dst, ts, cfg.r)
        ce_u = co.encode_cooccurrence_batch(cu, h.nce, cfg.dropout,
                                            drop_rng, train)

    flags = md.AblationFlags(no_mae=cfg.no_mae, no_nce=cfg.no_nce,
                             no_walks=cfg.no_walks,
                             no_restart=cfg.no_restart)
    emb_u = md.final_embedding(
        ad.gather_rows(h_all, np.arange(b)), ce_u, wenc_u,
        ad.gather_rows(pr_all, np.arange(b)), flags)
    probs = md.predict_node_label(emb_u, h.node, train, cfg.dropout,
                                  drop_rng)
    onehot = np.zeros((b, comp.dims.n_classes))
    onehot[np.arange(b), labels] = 1.0
    picked = ad.scale(ad.mean_axis(ad.mul(probs, ad.Tensor(onehot)), 1),
                      comp.dims.n_classes)
    loss = ad.scale(ad.mean_all(ad.log(picked)), -1.0)
    return loss, probs.data[:, 1].copy(), labels.astype(float)


def _stash_batch(comp, gsel):
    for i in gsel:
        comp.updater.stash(int(comp.src[i]), int(comp.dst[i]),
                           float(comp.t[i]), int(i))


def _batches(index_array, batch_size):
    for lo in range(0, len(index_array), batch_size):
        yield index_array[lo:lo + batch_size]


def train_epoch(comp, epoch, sampler, adam):
    cfg = comp.cfg
    drop_rng = wk.walk_rng(cfg.seed, wk.DOMAIN_DROPOUT, epoch, 0, 0)
    nbr_rng = wk.walk_rng(cfg.seed, wk.DOMAIN_NBR_UNIFORM, epoch, 0, 0)
    losses = []
    for gsel in _batches(comp.train_idx, cfg.batch_size):
        with ad.Tape() as tape:
            if cfg.task == "node":
                loss, _, _ = node_batch(comp, comp.train_graph,
                                        comp.embedder_train, gsel,
                                        train=True, drop_rng=drop_rng,
                                        nbr_rng=nbr_rng)
            else:
                neg, _ = sampler.sample(comp.src[gsel], comp.dst[gsel],
                                        gsel, tag=epoch)
                loss, _, _ = link_batch(comp, comp.train_graph,
                                        comp.embedder_train, gsel, neg,
                                        train=True, drop_rng=drop_rng,
                                        nbr_rng=nbr_rng)
            val = float(loss.data)
            if not np.isfinite(val):
                raise NonFiniteLossError(
                    f"non-finite loss {val} at epoch {epoch}, "
                    f"batch starting at event {int(gsel[0])}")
            tape.backward(loss)
        ad.adam_step(comp.params, adam)
        _stash_batch(comp, gsel)
        losses.append(val)
    return float(np.mean(losses))


def evaluate(comp, lo, hi, sampler, nbr_tag=0):
    """Replay [lo, hi); score the subset allowed by the setting."""
    cfg = comp.cfg
    nbr_rng = wk.walk_rng(cfg.seed, wk.DOMAIN_NBR_UNIFORM, nbr_tag, 1, 0)
    aps, aucs, losses = [], [], []
    fallbacks = 0
    for gsel in _batches(np.arange(lo, hi), cfg.batch_size):
        if comp.masked_nodes:
            keep = np.array([comp.src[i] in comp.masked_nodes
                             or comp.dst[i] in comp.masked_nodes
                             for i in gsel])
            scored = gsel[keep]
        else:
            scored = gsel
        if len(scored) == 0:
            comp.updater.flush(comp.full_graph)
            _stash_batch(comp, gsel)
            continue
        if cfg.task == "node":
            loss, scores, ys = node_batch(comp, comp.full_graph,
                                          comp.embedder_eval, scored,
                                          nbr_rng=nbr_rng)
        else:
            neg, fb = sampler.sample(comp.src[scored], comp.dst[scored],
                                     scored)
            fallbacks += fb
            loss, scores, ys = link_batch(comp, comp.full_graph,
                                          comp.embedder_eval, scored, neg,
                                          nbr_rng=nbr_rng)
        losses.append(float(loss.data))
        if ys.sum() > 0 and ys.sum() < len(ys):
            aps.append(mt.average_precision(scores, ys))
            aucs.append(mt.auc_roc(scores, ys))
        _stash_batch(comp, gsel)
    if not losses:
        raise ValueError("nothing to score in the evaluation span")
    return {"ap": float(np.mean(aps)) if aps else float("nan"),
            "auc": float(np.mean(aucs)) if aucs else float("nan"),
            "loss": float(np.mean(losses)), "fallbacks": fallbacks}


def _make_sampler(comp, strategy, eval_lo, eval_hi):
    events_pairs = frozenset(
        zip(comp.src[:comp.split.train_end].tolist(),
            comp.dst[:comp.split.train_end].tolist()))
    eval_pairs = None
    if strategy == "inductive":
        eval_pairs = frozenset(zip(comp.src[eval_lo:eval_hi].tolist(),
                                   comp.dst[eval_lo:eval_hi].tolist()))
    return ng.NegativeSampler(
        strategy=strategy, num_nodes=comp.num_nodes,
        dst_id_start=comp.dst_id_start, train_pairs=events_pairs,
        eval_pairs=eval_pairs, seed=comp.cfg.seed)


def _dump_walks(comp, path):
    split = comp.split
    gsel = np.arange(split.val_end,
                     min(split.val_end + 5, len(comp.src)))
    prs = np.full(len(gsel), 0.5)
    if comp.cfg.restart_mode.startswith("fixed:"):
        prs[:] = comp.cfg.fixed_restart_value()
    sets = wk.sample_walks(
        comp.full_graph, comp.src[gsel], comp.t[gsel], prs,
        w=comp.cfg.w, alpha=comp.cfg.alpha, M=comp.cfg.M,
        seed=comp.cfg.seed, event_indices=gsel,
        roles=np.zeros(len(gsel), dtype=np.int64),
        restart_sense=comp.cfg.restart_sense,
        allow_restart=not comp.cfg.no_restart)
    with open(path, "w") as f:
        for root_walks in sets:
            for walk in root_walks:
                f.write(wk.format_walk(walk) + "\n")


def _csv_row(cfg, epoch, ap, auc):
    return (f"{cfg.dataset},{cfg.setting},{cfg.nss},{cfg.seed},"
            f"{epoch},{ap:.10f},{auc:.10f}\n")


def run_experiment(cfg, log=print):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events, num_nodes, dst_id_start = load_dataset(cfg)
    split = ev.chrono_split(events)
    split.to_json(str(out / "splits.json"))

    rows = ["dataset,setting,nss,seed,epoch,ap,auc\n"]
    summary = {"config": cfg.to_dict()}

    if cfg.model == "edgebank":
        res = eb.evaluate_edgebank(events, split, strategy=cfg.nss,
                                   seed=cfg.seed, batch_size=cfg.batch_size,
                                   num_nodes=num_nodes,
                                   dst_id_start=dst_id_start)
        rows.append(_csv_row(cfg, -1, res["ap"], res["auc"]))
        summary["test"] = res
        (out / "results.csv").write_text("".join(rows))
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n")
        log(f"edgebank test ap={res['ap']:.4f} auc={res['auc']:.4f}")
        return summary

    comp = build_components(cfg, events, num_nodes, dst_id_start)
    if cfg.setting == "inductive":
        ev.inductive_mask_to_json(str(out / "inductive_mask.json"),
                                  comp.masked_nodes,
                                  cfg.inductive_fraction, cfg.seed)
    train_sampler = ng.NegativeSampler(
        strategy="random", num_nodes=num_nodes, dst_id_start=dst_id_start,
        train_pairs=frozenset(), seed=cfg.seed)
    val_sampler = _make_sampler(comp, cfg.nss, split.train_end,
                                split.val_end)
    test_sampler = _make_sampler(comp, cfg.nss, split.val_end, split.n)
    adam = ad.AdamState(lr=cfg.lr)

    best = None     # (val_loss, epoch, params, memory snapshot, val res)
    history = []
    stale = 0
    for epoch in range(cfg.epochs):
        comp.store.reset()
        train_loss = train_epoch(comp, epoch, train_sampler, adam)
        val = evaluate(comp, split.train_end, split.val_end, val_sampler,
                       nbr_tag=epoch)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val["loss"], "val_ap": val["ap"],
                        "val_auc": val["auc"]})
        rows.append(_csv_row(cfg, epoch, val["ap"], val["auc"]))
        log(f"epoch {epoch}: train_loss={train_loss:.4f} "
            f"val_loss={val['loss']:.4f} val_ap={val['ap']:.4f}")
        if best is None or val["loss"] < best[0]:
            best = (val["loss"], epoch, comp.params.copy_arrays(),
                    comp.store.snapshot(), val)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                log(f"early stop after epoch {epoch}")
                break

    comp.params.load_arrays(best[2])
    comp.store.restore(best[3])
    test = evaluate(comp, split.val_end, split.n, test_sampler,
                    nbr_tag=best[1])
    rows.append(_csv_row(cfg, -1, test["ap"], test["auc"]))
    log(f"test ap={test['ap']:.4f} auc={test['auc']:.4f} "
        f"(best epoch {best[1]})")

    summary.update({
        "best_epoch": best[1], "epochs_run": len(history),
        "val": {k: best[4][k] for k in ("ap", "auc", "loss", "fallbacks")},
        "test": test, "history": history,
    })
    (out / "results.csv").write_text("".join(rows))
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _save_checkpoint(comp, best[3], str(out / "checkpoint.json"))
    if cfg.walk_dump:
        _dump_walks(comp, cfg.walk_dump)
    if cfg.figures:
        from . import report
        report.render_figures(comp, history, out)
    return summary


def _save_checkpoint(comp, snap, path):
    pend_nodes = sorted(snap.pending)
    extras = {
        "memory.m": snap.m,
        "memory.last_update": snap.last_update,
        "memory.pending_nodes": np.array(pend_nodes, dtype=np.float64),
        "memory.pending_partner": np.array(
            [snap.pending[n].partner for n in pend_nodes],
            dtype=np.float64),
        "memory.pending_t": np.array(
            [snap.pending[n].t for n in pend_nodes]),
        "memory.pending_eidx": np.array(
            [snap.pending[n].eidx for n in pend_nodes], dtype=np.float64),
    }
    ad.save_checkpoint(path, comp.params, extras=extras)
