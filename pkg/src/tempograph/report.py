"""Run reporting: training figures and the restart-probability analysis.

Figures land in <out_dir>/figures next to the delimited results. The
restart analysis samples evaluation-span nodes, reads their continue
probability from the trained head, and correlates it with node degree
and mean inter-event time.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import autodiff as ad  # noqa: E402
from . import metrics as mt  # noqa: E402
from . import walks as wk  # noqa: E402


def restart_table(comp, max_nodes=200, seed=0):
    """Rows (node, degree, avg inter-event gap, pr) over a random sample
    of nodes seen after the validation boundary. Gap is NaN for nodes
    with fewer than two events."""
    lo = comp.split.val_end
    pool = sorted(set(comp.src[lo:].tolist()) | set(comp.dst[lo:].tolist()))
    rng = np.random.default_rng(seed)
    if len(pool) > max_nodes:
        nodes = np.sort(rng.choice(np.array(pool, dtype=np.int64),
                                   size=max_nodes, replace=False))
    else:
        nodes = np.array(pool, dtype=np.int64)
    t_end = float(comp.t[-1]) + 1.0

    mem_t = ad.Tensor(comp.store.m.copy())
    h = comp.embedder_eval.embed(mem_t, nodes, np.full(len(nodes), t_end))
    pr = wk.restart_probability(h, comp.handles.restart).data[:, 0]

    rows = []
    for i, u in enumerate(nodes):
        ts = np.asarray(comp.full_graph.adj_t[int(u)], dtype=float)
        gap = float(np.diff(ts).mean()) if len(ts) >= 2 else float("nan")
        rows.append((int(u), len(ts), gap, float(pr[i])))
    return rows


def restart_correlations(rows):
    """Spearman (characteristic, rho, p) of pr against degree and gap.

    Constant columns (every sampled node has the same degree) yield a
    NaN row rather than an error."""
    arr = np.array([(r[1], r[2], r[3]) for r in rows], dtype=float)
    out = []
    for name, col in (("degree", arr[:, 0]), ("avg_inter_event", arr[:, 1])):
        keep = np.isfinite(col)
        try:
            if keep.sum() < 3:
                raise ValueError("too few nodes")
            rho, p = mt.spearman_rho(arr[keep, 2], col[keep])
        except ValueError:
            rho, p = float("nan"), float("nan")
        out.append((name, rho, p))
    return out


def write_restart_csvs(rows, cors, out_dir):
    out = Path(out_dir)
    lines = ["node,degree,avg_inter_event,pr\n"]
    for node, deg, gap, pr in rows:
        lines.append(f"{node},{deg},{gap:.10f},{pr:.10f}\n")
    (out / "restart_analysis.csv").write_text("".join(lines))
    lines = ["characteristic,rho,p_value\n"]
    for name, rho, p in cors:
        lines.append(f"{name},{rho:.10f},{p:.10e}\n")
    (out / "restart_spearman.csv").write_text("".join(lines))


def render_figures(comp, history, out_dir):
    """Loss curve, validation metrics, and (for the learnable mode) the
    degree-vs-pr scatter. Returns the written paths."""
    figdir = Path(out_dir) / "figures"
    figdir.mkdir(parents=True, exist_ok=True)
    written = []
    epochs = [h["epoch"] for h in history]

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [h["train_loss"] for h in history], label="train")
    ax.plot(epochs, [h["val_loss"] for h in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    path = figdir / "loss_curve.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [h["val_ap"] for h in history], label="AP")
    ax.plot(epochs, [h["val_auc"] for h in history], label="AUC-ROC")
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation metric")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    path = figdir / "val_metrics.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    if comp.cfg.restart_mode == "learnable":
        rows = restart_table(comp)
        degs = [r[1] for r in rows]
        prs = [r[3] for r in rows]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.scatter(degs, prs, s=12, alpha=0.6)
        ax.set_xlabel("node degree")
        ax.set_ylabel("learned pr")
        ax.set_ylim(0.0, 1.0)
        fig.tight_layout()
        path = figdir / "restart_scatter.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
