"""Command-line entry points.

Every subcommand resolves a full config (defaults, --config file, --set
overrides), runs deterministically from --seed, writes its artifacts into
--out, and records a manifest sufficient to reproduce them byte-for-byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

# keep BLAS single-threaded before numpy loads anywhere: bitwise determinism
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np

from . import grounding as gr
from . import harness, plots, updn
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import Config, ConfigError, apply_overrides, config_hash, load_config, save_config, to_dict
from .manifest import write_manifest
from .scene import build_dataset, load_dataset, save_dataset

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


def _resolve_config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    if getattr(args, "lr", None) is not None:
        cfg = apply_overrides(cfg, [f"updn.base_lr={args.lr}", f"updn.warmup_start={args.lr}"])
    return cfg


def _write_json(path: str, payload) -> str:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _load_data(args):
    if not args.data or not os.path.isdir(args.data):
        raise FileNotFoundError(f"dataset directory not found: {args.data}")
    return load_dataset(args.data)


def _metrics_csv(path, history):
    plots.write_csv(
        path,
        ["epoch", "lr", "train_loss", "order_hash"],
        [[h.epoch, "%.8g" % h.lr, "%.8g" % h.train_loss, h.order_hash] for h in history],
    )


def cmd_gen_data(args, cfg: Config) -> list[str]:
    ds = build_dataset(cfg.dataset, args.seed)
    written = save_dataset(ds, args.out)
    report = {split: ds.answer_distribution(split) for split in ds.splits}
    written.append(_write_json(os.path.join(args.out, "answer_distribution.json"), report))
    return written


def cmd_train_updn(args, cfg: Config) -> list[str]:
    ds = _load_data(args)
    ctx = harness.RunContext(cfg, ds, args.seed)
    tr = harness.prepare_split(ctx, "train", args.mode, k=args.k)
    ev = harness.prepare_split(ctx, cfg.harness.eval_split, args.mode, k=args.k)
    result = harness.updn_run(ctx, tr, ev, args.seed, aux=args.aux)
    outputs = []
    ckpt = os.path.join(args.out, "updn.ckpt")
    save_checkpoint(result.params, ckpt)
    outputs.append(ckpt)
    csv_path = os.path.join(args.out, "epochs.csv")
    _metrics_csv(csv_path, result.history)
    outputs.append(csv_path)
    payload = result.metrics.row()
    if result.necessity_auc is not None:
        payload["necessity_auc"] = result.necessity_auc
    outputs.append(_write_json(os.path.join(args.out, "metrics.json"), payload))
    return outputs


def cmd_train_selector(args, cfg: Config) -> list[str]:
    ds = _load_data(args)
    ctx = harness.RunContext(cfg, ds, args.seed)
    params, history = harness.train_selector_for_seed(ctx, args.seed)
    outputs = []
    ckpt = os.path.join(args.out, "selector.ckpt")
    save_checkpoint(params, ckpt)
    outputs.append(ckpt)
    csv_path = os.path.join(args.out, "selector_epochs.csv")
    plots.write_csv(
        csv_path,
        ["epoch", "lr", "train_loss", "precision", "recall"],
        [[h.epoch, "%.8g" % h.lr, "%.8g" % h.train_loss, "%.6f" % h.precision, "%.6f" % h.recall] for h in history],
    )
    outputs.append(csv_path)
    return outputs


def cmd_eval(args, cfg: Config) -> list[str]:
    ds = _load_data(args)
    ctx = harness.RunContext(cfg, ds, args.seed)
    params = load_checkpoint(args.checkpoint)
    aux = "w_nec" in params
    ucfg = updn.UpDnConfig(**{**to_dict(cfg)["updn"], "aux_head": aux, "decay_epochs": tuple(cfg.updn.decay_epochs)})
    items = harness.prepare_split(ctx, args.split, args.mode, k=args.k)
    preds, nec = updn.predict(params, ucfg, items)
    metrics = harness.compute_metrics(preds, items, seed=args.seed, cfg_hash=config_hash(cfg))
    payload = metrics.row()
    if aux:
        payload["necessity_auc"] = harness.necessity_auc(nec, items)
    return [_write_json(os.path.join(args.out, "metrics.json"), payload)]


def cmd_sweep(args, cfg: Config) -> list[str]:
    ds = _load_data(args)
    ks = [int(k) for k in args.ks.split(",")] if args.ks else None
    seeds = list(range(args.seed, args.seed + cfg.harness.sweep_seeds))
    table = harness.run_quantity_sweep(cfg, ds, ks=ks, seeds=seeds)
    outputs = []
    rows = [[r["k"], "%.6f" % r["accuracy_mean"], "%.6f" % r["accuracy_std"], "%.4f" % r["objects_mean"]] for r in table]
    csv_path = os.path.join(args.out, "sweep.csv")
    plots.write_csv(csv_path, ["k", "accuracy_mean", "accuracy_std", "objects_mean"], rows)
    outputs.append(csv_path)
    svg = os.path.join(args.out, "sweep.svg")
    plots.write_curve_svg(
        svg,
        [r["k"] for r in table],
        [r["accuracy_mean"] for r in table],
        [r["accuracy_std"] for r in table],
        "Accuracy vs object budget",
        "object budget k",
        "accuracy",
    )
    outputs.append(svg)
    outputs.append(_write_json(os.path.join(args.out, "sweep.json"), table))
    return outputs


def cmd_ablate_quality(args, cfg: Config) -> list[str]:
    ds = _load_data(args)
    seeds = list(range(args.seed, args.seed + cfg.harness.n_seeds))
    table = harness.run_quality_ablation(cfg, ds, seeds=seeds)
    outputs = []
    header = ["mode", "accuracy", "std", "binary", "open", "objects"]
    rows = [
        [
            r["mode"],
            "%.4f" % r["accuracy_mean"],
            "%.4f" % r["accuracy_std"],
            "%.4f" % r["binary_mean"],
            "%.4f" % r["open_mean"],
            "%.2f" % r["objects_mean"],
        ]
        for r in table
    ]
    txt = os.path.join(args.out, "quality_table.txt")
    plots.write_table_text(txt, header, rows)
    outputs.append(txt)
    csv_path = os.path.join(args.out, "quality_table.csv")
    plots.write_csv(csv_path, header, rows)
    outputs.append(csv_path)
    outputs.append(_write_json(os.path.join(args.out, "quality_table.json"), table))
    return outputs


def cmd_ablate_aux(args, cfg: Config) -> list[str]:
    ds = _load_data(args)
    seeds = list(range(args.seed, args.seed + cfg.harness.n_seeds))
    result = harness.run_aux_supervision(cfg, ds, seeds=seeds)
    outputs = []
    header = ["seed", "accuracy_off", "accuracy_on", "delta", "necessity_auc"]
    rows = [
        [r["seed"], "%.4f" % r["accuracy_off"], "%.4f" % r["accuracy_on"], "%+.4f" % r["delta"], "%.4f" % r["necessity_auc"]]
        for r in result["per_seed"]
    ]
    txt = os.path.join(args.out, "aux_table.txt")
    plots.write_table_text(txt, header, rows)
    outputs.append(txt)
    outputs.append(_write_json(os.path.join(args.out, "aux_table.json"), result))
    return outputs


def cmd_compare_lg(args, cfg: Config) -> list[str]:
    ds = _load_data(args)
    seeds = list(range(args.seed, args.seed + cfg.harness.n_seeds))
    result = harness.run_lg_comparison(cfg, ds, seeds=seeds)
    outputs = []
    header = ["arm", "accuracy", "std", "objects"]
    arms = ["baseline_small", "baseline_matched", "baseline_default", "lg", "union"]
    rows = [
        [a, "%.4f" % result[a]["accuracy_mean"], "%.4f" % result[a]["accuracy_std"], "%.2f" % result[a]["objects_mean"]]
        for a in arms
    ]
    txt = os.path.join(args.out, "lg_table.txt")
    plots.write_table_text(txt, header, rows)
    outputs.append(txt)
    outputs.append(_write_json(os.path.join(args.out, "lg_table.json"), result))
    return outputs


def cmd_export_attention(args, cfg: Config) -> list[str]:
    ds = _load_data(args)
    ctx = harness.RunContext(cfg, ds, args.seed)
    params = load_checkpoint(args.checkpoint)
    qa = ds.splits[args.split][args.index]
    result = gr.select(params, cfg.grounding, ctx.proposals(qa.scene_id), qa.tokens)
    tokens = qa.token_strings()
    matrix, annotations = gr.export_attention(result, tokens)
    outputs = []
    mat_path = os.path.join(args.out, "attention.txt")
    with open(mat_path, "w") as f:
        f.write("# rows: selected objects; columns: " + " ".join(tokens) + "\n")
        for row, ann in zip(matrix, annotations):
            f.write(json.dumps(ann, sort_keys=True) + "\n")
            f.write(" ".join("%.6f" % v for v in row) + "\n")
    outputs.append(mat_path)
    svg = os.path.join(args.out, "attention.svg")
    plots.write_heatmap_svg(
        svg,
        [[float(v) for v in row] for row in matrix],
        [f"obj{a['row']}" for a in annotations],
        tokens,
        "object-token cross attention",
    )
    outputs.append(svg)
    return outputs


def cmd_plot(args, cfg: Config) -> list[str]:
    import csv as _csv

    with open(args.csv) as f:
        reader = _csv.DictReader(f)
        rows = list(reader)
    xs = [int(r["k"]) for r in rows]
    means = [float(r["accuracy_mean"]) for r in rows]
    stds = [float(r["accuracy_std"]) for r in rows]
    svg = os.path.join(args.out, "sweep.svg")
    plots.write_curve_svg(svg, xs, means, stds, "Accuracy vs object budget", "object budget k", "accuracy")
    return [svg]


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-updn": cmd_train_updn,
    "train-selector": cmd_train_selector,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate-quality": cmd_ablate_quality,
    "ablate-aux": cmd_ablate_aux,
    "compare-lg": cmd_compare_lg,
    "export-attention": cmd_export_attention,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqalab", description="Synthetic VQA vision-bottleneck laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="config JSON (or a manifest.json)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        if name in ("train-updn", "train-selector", "eval", "sweep", "ablate-quality", "ablate-aux", "compare-lg", "export-attention"):
            p.add_argument("--data", required=True, help="dataset directory from gen-data")
        if name in ("train-updn", "eval"):
            p.add_argument("--mode", default="baseline", choices=list(harness.QUALITY_MODES))
            p.add_argument("--k", type=int, default=None)
            p.add_argument("--lr", type=float, default=None)
        if name == "train-updn":
            p.add_argument("--aux", action="store_true", help="enable the necessity head")
        if name == "eval":
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--split", default="val")
        if name == "sweep":
            p.add_argument("--ks", default=None, help="comma-separated budgets")
        if name == "export-attention":
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--split", default="val")
            p.add_argument("--index", type=int, default=0)
        if name == "plot":
            p.add_argument("--csv", required=True, help="sweep.csv to re-plot")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(args.out, exist_ok=True)
    start = time.time()
    try:
        outputs = COMMANDS[args.command](args, cfg)
    except (ConfigError,) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, CheckpointError, RuntimeError, ValueError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    cfg_path = os.path.join(args.out, "config.json")
    save_config(cfg, cfg_path)
    inputs = []
    if getattr(args, "data", None):
        for name in sorted(os.listdir(args.data)):
            if name.endswith(".jsonl"):
                inputs.append(os.path.join(args.data, name))
    extra = {
        k: getattr(args, k)
        for k in ("mode", "k", "aux", "split", "index", "ks", "checkpoint", "csv", "data")
        if hasattr(args, k) and getattr(args, k) is not None
    }
    write_manifest(
        args.out,
        args.command,
        cfg,
        args.seed,
        inputs,
        outputs + [cfg_path],
        time.time() - start,
        extra_args=extra,
    )
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
