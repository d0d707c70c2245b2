"""Experiment runner.

Subcommands: `run` executes one configuration end to end, `sweep` runs
a small grid over the walk count M and co-occurrence window r, writing
one aggregated row per cell, `gradcheck` verifies every fused autodiff
kernel against central differences, and `analyze-restart` emits the
pr-vs-degree / pr-vs-inter-event-time correlation tables for a finished
run directory.

Exit codes: 0 success, 2 configuration or input error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import config as cf
from . import training as tr

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_raw_config(path: str) -> dict:
    return json.loads(Path(path).read_text())


def _overrides_from_args(args) -> dict:
    out = {}
    for key in ("seed", "out_dir", "dataset", "dataset_path", "epochs",
                "model", "task", "setting", "nss"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    for flag in ("no_mae", "no_nce", "no_walks", "no_restart", "figures"):
        if getattr(args, flag, False):
            out[flag] = True
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        out[key] = _parse_value(val)
    return out


def cmd_run(args) -> int:
    try:
        raw = _load_raw_config(args.config)
        raw.update(_overrides_from_args(args))
        cfg = cf.config_from_dict(raw)
    except (OSError, ValueError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        tr.run_experiment(cfg)
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (tr.NonFiniteLossError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _grid_values(text, fallback):
    if text is None:
        return [fallback]
    return [int(x) for x in text.split(",") if x]


def cmd_sweep(args) -> int:
    try:
        raw = _load_raw_config(args.config)
        raw.update(_overrides_from_args(args))
        base = cf.config_from_dict(raw)
        m_values = _grid_values(args.M, base.M)
        r_values = _grid_values(args.r, base.r)
    except (OSError, ValueError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    out_root = Path(args.out_root or base.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    rows = ["M,r,ap,auc,status\n"]
    for m_val in m_values:
        for r_val in r_values:
            cell_raw = dict(raw)
            cell_raw.update(M=m_val, r=r_val,
                            out_dir=str(out_root / f"M{m_val}_r{r_val}"))
            try:
                cfg = cf.config_from_dict(cell_raw)
                summary = tr.run_experiment(cfg)
                test = summary["test"]
                rows.append(f"{m_val},{r_val},{test['ap']:.10f},"
                            f"{test['auc']:.10f},ok\n")
            except Exception as e:  # isolate the cell, keep sweeping
                print(f"cell M={m_val} r={r_val} failed: {e}",
                      file=sys.stderr)
                rows.append(f"{m_val},{r_val},nan,nan,"
                            f"{type(e).__name__}\n")
    (out_root / "sweep.csv").write_text("".join(rows))
    print(f"wrote {out_root / 'sweep.csv'}")
    return EXIT_OK


def kernel_gradcheck(seed: int = 0) -> dict[str, float]:
    """Max relative gradient error per fused kernel, via central
    differences on small random instances."""
    rng = np.random.default_rng(seed)
    report = {}

    def check(name, build):
        params, fn = build()
        report[name] = ad.grad_check(fn, params)

    def t(*shape):
        return rng.standard_normal(shape)

    def build_dense():
        g = ad.ParamGroup()
        w = g.add("w", t(4, 3)).tensor
        b = g.add("b", t(3)).tensor
        x = ad.Tensor(t(5, 4))
        return g, lambda: ad.mean_all(ad.tanh(ad.dense(x, w, b)))

    def build_gru():
        g = ad.ParamGroup()
        d_in, d_h = 4, 3
        p = ad.GruParams(
            w_z=g.add("w_z", t(d_in + d_h, d_h)).tensor,
            b_z=g.add("b_z", t(d_h)).tensor,
            w_r=g.add("w_r", t(d_in + d_h, d_h)).tensor,
            b_r=g.add("b_r", t(d_h)).tensor,
            w_c=g.add("w_c", t(d_in + d_h, d_h)).tensor,
            b_c=g.add("b_c", t(d_h)).tensor)
        x, h = ad.Tensor(t(6, d_in)), ad.Tensor(t(6, d_h))
        return g, lambda: ad.mean_all(ad.gru_cell(x, h, p))

    def build_attention_core():
        g = ad.ParamGroup()
        q = g.add("q", t(5, 2, 3)).tensor
        k = g.add("k", t(5, 2, 4, 3)).tensor
        v = g.add("v", t(5, 2, 4, 2)).tensor
        mask = rng.random((5, 4)) < 0.8
        mask[:, 0] = True
        return g, lambda: ad.mean_all(ad.attention_core(q, k, v, mask))

    def build_mha():
        g = ad.ParamGroup()
        heads, d_out = 2, 6
        p = ad.AttnParams(
            w_q=g.add("w_q", t(5, d_out)).tensor,
            w_k=g.add("w_k", t(4, d_out)).tensor,
            w_v=g.add("w_v", t(4, d_out)).tensor,
            w_o=g.add("w_o", t(d_out, d_out)).tensor)
        q = ad.Tensor(t(3, 5))
        k = ad.Tensor(t(3, 7, 4))
        v = ad.Tensor(t(3, 7, 4))
        mask = rng.random((3, 7)) < 0.8
        mask[:, 0] = True
        return g, lambda: ad.mean_all(
            ad.multi_head_attention_batch(q, k, v, heads, p, mask))

    def build_time_encode():
        g = ad.ParamGroup()
        omega = g.add("omega", t(6, )).tensor
        bias = g.add("bias", t(6, )).tensor
        dt = np.abs(t(8)) * 3.0
        return g, lambda: ad.mean_all(
            ad.time_encode_learnable(dt, omega, bias))

    def build_bce_chain():
        g = ad.ParamGroup()
        w1 = g.add("w1", t(4, 3)).tensor
        b1 = g.add("b1", t(3)).tensor
        w2 = g.add("w2", t(3, 1)).tensor
        b2 = g.add("b2", t(1)).tensor
        x = ad.Tensor(t(6, 4))
        y = (rng.random((6, 1)) < 0.5).astype(float)

        def fn():
            hid = ad.relu(ad.dense(x, w1, b1))
            p = ad.sigmoid(ad.dense(hid, w2, b2))
            return ad.bce_loss(p, y)
        return g, fn

    def build_softmax():
        g = ad.ParamGroup()
        w = g.add("w", t(4, 5)).tensor
        x = ad.Tensor(t(3, 4))
        onehot = np.eye(5)[rng.integers(0, 5, size=3)]

        def fn():
            probs = ad.softmax(ad.matmul(x, w), axis=1)
            picked = ad.scale(ad.mean_axis(
                ad.mul(probs, ad.Tensor(onehot)), 1), 5.0)
            return ad.neg(ad.mean_all(ad.log(picked)))
        return g, fn

    check("dense", build_dense)
    check("gru_cell", build_gru)
    check("attention_core", build_attention_core)
    check("multi_head_attention", build_mha)
    check("time_encode", build_time_encode)
    check("bce_chain", build_bce_chain)
    check("softmax_nll", build_softmax)
    return report


def cmd_gradcheck(args) -> int:
    report = kernel_gradcheck(args.seed)
    worst = 0.0
    for name, err in report.items():
        print(f"{name:24s} {err:.3e}")
        worst = max(worst, err)
    if worst > args.tolerance:
        print(f"numeric error: worst {worst:.3e} exceeds tolerance "
              f"{args.tolerance:g}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all kernels within {args.tolerance:g}")
    return EXIT_OK


def cmd_analyze_restart(args) -> int:
    from . import report as rp

    run_dir = Path(args.run_dir)
    try:
        summary = json.loads((run_dir / "summary.json").read_text())
        cfg = cf.config_from_dict(summary["config"])
        events, num_nodes, dst_id_start = tr.load_dataset(cfg)
        comp = tr.build_components(cfg, events, num_nodes, dst_id_start)
        extras = ad.load_checkpoint(str(run_dir / "checkpoint.json"),
                                    comp.params)
    except (OSError, ValueError, TypeError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    comp.store.m = extras["memory.m"].copy()
    comp.store.last_update = extras["memory.last_update"].copy()

    rows = rp.restart_table(comp, max_nodes=args.nodes, seed=args.seed)
    cors = rp.restart_correlations(rows)
    rp.write_restart_csvs(rows, cors, run_dir)
    print("characteristic        rho        p_value")
    for name, rho, p in cors:
        print(f"{name:20s} {rho:+.4f}  {p:.3e}")
    print(f"wrote {run_dir / 'restart_analysis.csv'} and "
          f"{run_dir / 'restart_spearman.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempograph",
        description="Continuous-time dynamic-graph experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True,
                       help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--dataset")
        p.add_argument("--dataset-path", dest="dataset_path")
        p.add_argument("--epochs", type=int)
        p.add_argument("--model", choices=["full", "edgebank"])
        p.add_argument("--task", choices=["link", "node"])
        p.add_argument("--setting", choices=["transductive", "inductive"])
        p.add_argument("--nss",
                       choices=["random", "historical", "inductive"])
        p.add_argument("--no-mae", action="store_true")
        p.add_argument("--no-nce", action="store_true")
        p.add_argument("--no-walks", action="store_true")
        p.add_argument("--no-restart", action="store_true")
        p.add_argument("--figures", action="store_true")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key")

    p_run = sub.add_parser("run", help="run one experiment")
    add_common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep",
                             help="grid over walk count M and window r")
    add_common(p_sweep)
    p_sweep.add_argument("--M", help="comma-separated walk counts")
    p_sweep.add_argument("--r", help="comma-separated window sizes")
    p_sweep.add_argument("--out-root", dest="out_root")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_grad = sub.add_parser("gradcheck",
                            help="verify fused kernels numerically")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.set_defaults(fn=cmd_gradcheck)

    p_ar = sub.add_parser("analyze-restart",
                          help="pr vs degree / inter-event correlation")
    p_ar.add_argument("--run-dir", required=True)
    p_ar.add_argument("--nodes", type=int, default=200)
    p_ar.add_argument("--seed", type=int, default=0)
    p_ar.set_defaults(fn=cmd_analyze_restart)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
