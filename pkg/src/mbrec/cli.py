"""Command-line harness for dataset preparation, training, and studies.

Subcommands: prepare, synth, train, evaluate, ablate, grid, refstudy,
report. Run outputs are JSON-lines files; report renders any of them as an
aligned plain-text table. Every run directory receives a frozen copy of the
resolved config, and re-running from that copy reproduces the metrics
bit-for-bit.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint
from .config import (
    ACG_MODES,
    ACTIVATIONS,
    NEIGHBORHOOD_MODES,
    WEIGHTING_MODES,
    TrainConfig,
    VariantSpec,
    all_variants,
)
from .data import (
    BEHAVIOR_NAMES,
    load_interactions,
    load_prepared,
    prepare_dataset,
    save_prepared,
    write_interactions,
)
from .evaluate import evaluate
from .graph import build_graph
from .loss import build_weight_table
from .model import GraphTensors, forward
from .synthetic import synthetic_log
from .train import train

FROZEN_CONFIG = "config.resolved.cfg"

# sweep defaults: negative-weight caps and frequency exponents
GRID_C_DEFAULT = (0.01, 0.05, 0.1, 0.5, 1.0)
GRID_X_DEFAULT = (0.15, 0.25, 0.5, 0.75, 0.85)

_CONFIG_FLAGS = [
    ("--embed-dim", "embed_dim", int, "latent dimension"),
    ("--num-layers", "num_layers", int, "propagation layers"),
    ("--activation", "activation", str, f"one of {ACTIVATIONS}"),
    ("--acg", "acg", str, f"aggregation mode, one of {ACG_MODES}"),
    ("--neg-budget", "neg_budget", float, "total negative weight per behavior"),
    ("--freq-exponent", "freq_exponent", float, "frequency flattening exponent"),
    ("--ref-behavior", "ref_behavior", str, f"one of {BEHAVIOR_NAMES}"),
    ("--lambdas", "lambdas", str, "comma-separated behavior loss weights"),
    ("--reg-weight", "reg_weight", float, "L2 coefficient"),
    ("--uniform-neg-weight", "uniform_neg_weight", float,
     "constant negative weight for uniform mode"),
    ("--lr", "lr", float, "Adam learning rate"),
    ("--epochs", "epochs", int, "training epochs"),
    ("--patience", "patience", int, "early-stop patience, 0 disables"),
    ("--clip-norm", "clip_norm", float, "global gradient-norm cap"),
    ("--chunk-size", "chunk_size", int, "user-chunk size for the loss sums"),
    ("--seed", "seed", int, "RNG seed"),
    ("--neighborhood", "neighborhood", str, f"one of {NEIGHBORHOOD_MODES}"),
    ("--weighting", "weighting", str, f"one of {WEIGHTING_MODES}"),
    ("--eval-ks", "eval_ks", str, "comma-separated cutoffs"),
    ("--eval-every", "eval_every", int, "validation interval in epochs"),
]
_CONFIG_BOOL_FLAGS = [
    ("--per-layer-wbeh", "per_layer_wbeh", "separate edge maps per layer"),
    ("--edge-self-loop", "edge_self_loop",
     "count an edge inside its own neighborhood when enumerating"),
    ("--wint-through-gradient", "wint_through_gradient",
     "let gradients reach the intensity projection"),
    ("--ref-denominator", "ref_denominator",
     "normalize cross-behavior scores by the reference total"),
    ("--exclude-valid", "exclude_valid",
     "drop the validation item from test candidate sets"),
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="key = value config file; flags override it")
    for flag, dest, typ, help_text in _CONFIG_FLAGS:
        parser.add_argument(flag, dest=dest, type=typ, default=None,
                            help=help_text)
    for flag, dest, help_text in _CONFIG_BOOL_FLAGS:
        parser.add_argument(flag, dest=dest, default=None,
                            action=argparse.BooleanOptionalAction,
                            help=help_text)


def _resolve_config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {}
    for _, dest, _, _ in _CONFIG_FLAGS:
        value = getattr(args, dest)
        if value is None:
            continue
        if dest in ("lambdas", "eval_ks"):
            caster = int if dest == "eval_ks" else float
            value = tuple(caster(p) for p in str(value).split(",") if p.strip())
        overrides[dest] = value
    for _, dest, _ in _CONFIG_BOOL_FLAGS:
        value = getattr(args, dest)
        if value is not None:
            overrides[dest] = value
    return cfg.override(**overrides)


def _emit(row: dict, stream=None) -> None:
    line = json.dumps(row)
    print(line)
    if stream is not None:
        stream.write(line + "\n")
        stream.flush()


def run_training(cfg: TrainConfig, prepared, out_dir: Path,
                 resume_from=None) -> dict:
    """One full train + test cycle in out_dir; returns the metrics row."""
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / FROZEN_CONFIG)
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as log:
        result = train(cfg, prepared, log_stream=log,
                       checkpoint_path=out_dir / "model.ckpt",
                       resume_from=resume_from)
    gt = GraphTensors.from_graph(result.graph)
    with torch.no_grad():
        output = forward(result.params, gt, cfg)
    extra = prepared.valid if cfg.exclude_valid else None
    test_res = evaluate(output, result.params.W_pre, result.graph,
                        prepared.test, cfg.eval_ks, extra_exclude=extra)
    row = {"split": "test", "best_epoch": result.best_epoch,
           "stopped_early": result.stopped_early}
    row.update(test_res.as_dict())
    return row


def run_variant(spec: VariantSpec, cfg: TrainConfig, prepared, out_dir: Path) -> dict:
    """Train and test one ablation cell; emits a table-ready row."""
    row = {"variant": spec.name, "neighborhood": spec.neighborhood,
           "weighting": spec.weighting}
    row.update(run_training(spec.apply(cfg), prepared, out_dir))
    return row


def cmd_prepare(args) -> int:
    log = load_interactions(args.input)
    prepared = prepare_dataset(
        log,
        min_interactions=args.min_interactions,
        min_purchases=args.min_purchases,
        apply_filter=not args.no_filter,
    )
    save_prepared(prepared, args.out)
    _emit(prepared.stats)
    return 0


def cmd_synth(args) -> int:
    log = synthetic_log(
        num_users=args.users,
        num_items=args.items,
        num_groups=args.groups,
        num_distractors=args.distractors,
        seed=args.seed,
    )
    if args.raw is not None:
        write_interactions(log, args.raw)
    prepared = prepare_dataset(log, apply_filter=False)
    save_prepared(prepared, args.out)
    _emit(prepared.stats)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    prepared = load_prepared(args.data)
    out_dir = Path(args.out)
    row = run_training(cfg, prepared, out_dir, resume_from=args.resume)
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as out:
        _emit(row, out)
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.config is not None:
        cfg = _resolve_config(args)
    elif ckpt.config_text is not None:
        cfg = ckpt.config()
    else:
        raise SystemExit("checkpoint carries no config; pass --config")
    prepared = load_prepared(args.data)
    params = ckpt.to_params(cfg)
    graph = build_graph(prepared.train)
    gt = GraphTensors.from_graph(graph)
    with torch.no_grad():
        output = forward(params, gt, cfg)
    heldout = prepared.valid if args.split == "valid" else prepared.test
    extra = None
    if args.split == "test" and cfg.exclude_valid:
        extra = prepared.valid
    res = evaluate(output, params.W_pre, graph, heldout, cfg.eval_ks,
                   extra_exclude=extra)
    row = {"split": args.split}
    row.update(res.as_dict())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / FROZEN_CONFIG)
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as out:
        _emit(row, out)
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    prepared = load_prepared(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / FROZEN_CONFIG)
    with open(out_dir / "ablation.jsonl", "w", encoding="utf-8") as out:
        for spec in all_variants():
            row = run_variant(spec, cfg, prepared, out_dir / spec.name)
            _emit(row, out)
    return 0


def _grid_cell(payload) -> dict:
    data_dir, cfg_text, out_dir, c_value, x_value = payload
    cfg = TrainConfig.from_text(cfg_text).override(
        neg_budget=c_value, freq_exponent=x_value
    )
    prepared = load_prepared(data_dir)
    row = {"C": c_value, "x": x_value}
    row.update(run_training(cfg, prepared, Path(out_dir)))
    return row


def cmd_grid(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / FROZEN_CONFIG)
    c_values = [float(p) for p in args.c_values.split(",") if p.strip()]
    x_values = [float(p) for p in args.x_values.split(",") if p.strip()]
    payloads = [
        (str(args.data), cfg.to_text(), str(out_dir / f"C{c}_x{x}"), c, x)
        for c in c_values
        for x in x_values
    ]
    with open(out_dir / "grid.jsonl", "w", encoding="utf-8") as out:
        if args.parallel > 1:
            with ProcessPoolExecutor(max_workers=args.parallel) as pool:
                for row in pool.map(_grid_cell, payloads):
                    _emit(row, out)
        else:
            for payload in payloads:
                _emit(_grid_cell(payload), out)
    return 0


def cmd_refstudy(args) -> int:
    cfg = _resolve_config(args)
    prepared = load_prepared(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / FROZEN_CONFIG)
    freq = torch.from_numpy(prepared.freq.counts)
    with open(out_dir / "refstudy.jsonl", "w", encoding="utf-8") as out:
        for name in BEHAVIOR_NAMES:
            ref_cfg = cfg.override(ref_behavior=name, weighting="intensity")
            cell_dir = out_dir / f"ref_{name}"
            row = {"ref_behavior": name}
            row.update(run_training(ref_cfg, prepared, cell_dir))

            # recompute the final weight table for distribution statistics
            ckpt = load_checkpoint(cell_dir / "model.ckpt")
            params = ckpt.to_params(ref_cfg)
            graph = build_graph(prepared.train)
            gt = GraphTensors.from_graph(graph)
            with torch.no_grad():
                output = forward(params, gt, ref_cfg)
                table = build_weight_table(ref_cfg, freq, output.item_final,
                                           params.W_int)
            for k, behavior in enumerate(BEHAVIOR_NAMES):
                weights = table.neg[k].numpy()
                mean = float(weights.mean())
                std = float(weights.std())
                row[f"cv_{behavior}"] = std / mean if mean > 0 else 0.0
                counts, edges = np.histogram(weights, bins=args.bins)
                row[f"hist_{behavior}"] = {
                    "edges": [float(e) for e in edges],
                    "counts": [int(c) for c in counts],
                }
            _emit(row, out)
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.results:
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    if not rows:
        print("no result rows")
        return 0
    columns = []
    for row in rows:
        for key in row:
            if key not in columns and not isinstance(row[key], dict):
                columns.append(key)

    def render(value):
        if value is None:
            return "-"
        if isinstance(value, bool):
            return "yes" if value else "no"
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    table = [[render(row.get(col)) for col in columns] for row in rows]
    widths = [
        max(len(col), *(len(line[i]) for line in table))
        for i, col in enumerate(columns)
    ]
    header = "  ".join(col.ljust(w) for col, w in zip(columns, widths))
    rule = "  ".join("-" * w for w in widths)
    print(header)
    print(rule)
    for line in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(line, widths)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbrec",
        description="multi-behavior recommendation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="index, filter and split a raw event log")
    p.add_argument("--input", type=Path, required=True,
                   help="TSV of user, item, behavior, timestamp")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--min-interactions", type=int, default=10)
    p.add_argument("--min-purchases", type=int, default=5)
    p.add_argument("--no-filter", action="store_true",
                   help="skip activity filtering")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate the synthetic benchmark dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=200)
    p.add_argument("--groups", type=int, default=10)
    p.add_argument("--distractors", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw", type=Path, default=None,
                   help="also write the raw event TSV here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path, default=None,
                   help="checkpoint to continue from")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on valid or test")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the six neighborhood x weighting cells")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grid", help="sweep the negative budget and exponent")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--c-values", type=str,
                   default=",".join(str(c) for c in GRID_C_DEFAULT))
    p.add_argument("--x-values", type=str,
                   default=",".join(str(x) for x in GRID_X_DEFAULT))
    p.add_argument("--parallel", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("refstudy",
                       help="compare reference behaviors for the weight table")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--bins", type=int, default=20)
    _add_config_flags(p)
    p.set_defaults(func=cmd_refstudy)

    p = sub.add_parser("report", help="render JSON-lines results as a table")
    p.add_argument("results", nargs="+", type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
