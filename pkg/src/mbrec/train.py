"""Full-batch training with per-epoch weight tables and early stopping.

Each epoch: one forward pass over the whole graph, a fresh negative-weight
table from the current (detached) item states, the multi-behavior loss,
reverse-mode gradients, global-norm clipping, one Adam step. Validation
HR@10 drives early stopping; the best-scoring state (parameters plus
optimizer moments) is what gets checkpointed.

The epoch log is one JSON object per line; record e describes the state
after e updates, so a run writes epochs + 1 records.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import BEHAVIOR_NAMES, PreparedData
from .evaluate import EvalResult, evaluate
from .graph import BehaviorGraph, build_graph
from .loss import build_weight_table, total_loss
from .model import GraphTensors, ParameterSet, forward, init_params
from .optim import Adam, clip_global_norm, compute_gradients


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    params: ParameterSet
    graph: BehaviorGraph
    best_epoch: int
    best_valid: EvalResult | None
    stopped_early: bool
    history: list = field(default_factory=list)


def train(
    cfg: TrainConfig,
    prepared: PreparedData,
    log_stream=None,
    checkpoint_path=None,
    resume_from=None,
) -> TrainResult:
    cfg.validate()
    graph = build_graph(prepared.train)
    gt = GraphTensors.from_graph(graph)
    freq = torch.from_numpy(prepared.freq.counts)

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        params = ckpt.to_params(cfg)
        opt = Adam(params, lr=cfg.lr)
        if ckpt.optimizer_state is not None:
            opt.load_state_dict(ckpt.optimizer_state)
            opt.lr = cfg.lr
    else:
        params = init_params(cfg, graph.num_users, graph.num_items)
        opt = Adam(params, lr=cfg.lr)

    best_metric = -math.inf
    best_epoch = -1
    best_params = None
    best_opt_state = None
    best_valid = None
    evals_since_best = 0
    stopped_early = False
    history = []

    for epoch in range(cfg.epochs + 1):
        t0 = time.perf_counter()
        output = forward(params, gt, cfg)
        table = build_weight_table(cfg, freq, output.item_final, params.W_int)
        report = total_loss(params, output, gt, table, cfg)
        total_value = float(report.total.detach())
        if not math.isfinite(total_value):
            raise TrainingError(f"non-finite loss at epoch {epoch}")

        record = {"epoch": epoch}
        for name, value in zip(BEHAVIOR_NAMES, report.per_behavior):
            record[f"L_{name}"] = value
        record["reg"] = report.reg
        record["total"] = total_value

        is_last = epoch == cfg.epochs
        if prepared.valid and (epoch % cfg.eval_every == 0 or is_last):
            valid_res = evaluate(
                output, params.W_pre, graph, prepared.valid, cfg.eval_ks
            )
            for key, value in valid_res.as_dict().items():
                if key != "users":
                    record[f"valid_{key}"] = value
            metric = valid_res.hr[cfg.eval_ks[0]]
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best_params = params.clone()
                best_opt_state = opt.state_dict()
                best_valid = valid_res
                evals_since_best = 0
            else:
                evals_since_best += 1
                if cfg.patience and evals_since_best >= cfg.patience:
                    stopped_early = True

        record["wall_ms"] = (time.perf_counter() - t0) * 1000.0
        history.append(record)
        if log_stream is not None:
            log_stream.write(json.dumps(record) + "\n")
            log_stream.flush()
        if is_last or stopped_early:
            break

        grads = compute_gradients(report.total, params)
        clip_global_norm(grads, cfg.clip_norm)
        opt.step(params, grads)

    if best_params is None:
        best_params = params.clone()
        best_opt_state = opt.state_dict()
        best_epoch = len(history) - 1
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, best_params, cfg, best_opt_state)
    return TrainResult(
        params=best_params,
        graph=graph,
        best_epoch=best_epoch,
        best_valid=best_valid,
        stopped_early=stopped_early,
        history=history,
    )
