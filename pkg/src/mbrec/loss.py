"""Whole-data training objective with per-item negative weights.

Every unobserved (user, item) pair counts as a weighted negative, so each
behavior's loss runs over the full interaction matrix. The quadratic part
decomposes into d x d Gram matrices, which drops the cost from O(M * N * d)
to O((M + N) * d^2) per behavior; a pure-Python reference implementation of
the undecomposed sum is kept alongside for verification.

Losses follow a dropped-constant convention: the constant ``pos_weight *
|E_k|`` contributed by positive targets is omitted from the returned value
and reported separately, so loss values can be negative.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch

from .config import TrainConfig
from .data import NUM_BEHAVIORS
from .model import GraphTensors, ModelOutput, ParameterSet

POSITIVE_WEIGHT = 1.0


@dataclass
class NegativeWeightTable:
    """Per-behavior, per-item negative weights, fixed for a whole epoch."""

    neg: torch.Tensor  # [K, N]; detached unless the projection is trained
    pos: float
    mode: str

    def validate(self, budget: float) -> None:
        if torch.any(self.neg < 0):
            raise ValueError("negative weights must be non-negative")
        if self.mode == "intensity" and torch.any(self.neg > budget):
            raise ValueError("negative weights must not exceed the budget")


def item_intensity_share(freq: torch.Tensor) -> torch.Tensor:
    """Per-behavior item share of total interaction volume, rows sum to 1.

    Behaviors with no interactions get an all-zero row.
    """
    totals = freq.sum(dim=1, keepdim=True).clamp(min=1)
    return freq.to(torch.get_default_dtype()) / totals


def item_frequency_scores(
    item_final: torch.Tensor,
    w_int: torch.Tensor,
    freq: torch.Tensor,
    ref_index: int,
    ref_denominator: bool = False,
) -> torch.Tensor:
    """Raw per-item scores combining learned item state and behavior volume.

    The item projection is clamped at zero, scaled by the item's share of
    the behavior's volume, then re-scaled by the reference behavior's count
    over the current behavior's total (or the reference total when
    ``ref_denominator`` is set). The item state always enters detached;
    ``w_int`` is used as given, so the caller controls whether gradients
    flow through the projection vector.
    """
    dtype = item_final.dtype
    base = item_final.detach() @ w_int.to(dtype)  # [N]
    counts = freq.to(dtype)
    totals = counts.sum(dim=1, keepdim=True)  # [K, 1]
    safe_totals = totals.clamp(min=1.0)
    first = torch.clamp(base.unsqueeze(0) * counts / safe_totals, min=0.0)
    ref_counts = counts[ref_index].unsqueeze(0)  # [1, N]
    if ref_denominator:
        denom = safe_totals[ref_index].clamp(min=1.0)
    else:
        denom = safe_totals
    return first * ref_counts / denom


def budget_normalize(
    scores: torch.Tensor, budget: float, exponent: float
) -> torch.Tensor:
    """Map non-negative scores to weights summing to ``budget`` per behavior.

    Zero scores stay at exactly zero weight. A behavior whose scores are all
    zero falls back to a uniform split of the budget, with a warning.
    """
    powered = torch.where(scores > 0, scores, torch.zeros_like(scores)) ** exponent
    out = torch.zeros_like(powered)
    for k in range(powered.shape[0]):
        row_sum = powered[k].sum()
        if float(row_sum.detach()) <= 0.0:
            warnings.warn(
                f"behavior {k}: all negative-weight scores are zero, "
                "falling back to a uniform split",
                stacklevel=2,
            )
            out[k] = budget / powered.shape[1]
        else:
            out[k] = budget * powered[k] / row_sum
    return out


def build_weight_table(
    cfg: TrainConfig,
    freq: torch.Tensor,
    item_final: torch.Tensor,
    w_int: torch.Tensor,
) -> NegativeWeightTable:
    """Negative-weight table for one epoch.

    Item states enter detached so the table is an epoch constant. With
    ``wint_through_gradient`` the projection vector stays connected to the
    graph and receives gradients through the weights it produces.
    """
    num_items = freq.shape[1]
    if cfg.weighting == "uniform":
        neg = torch.full(
            (NUM_BEHAVIORS, num_items),
            cfg.uniform_neg_weight,
            dtype=item_final.dtype,
        )
        return NegativeWeightTable(neg=neg, pos=POSITIVE_WEIGHT, mode="uniform")
    scores = item_frequency_scores(
        item_final,
        w_int if cfg.wint_through_gradient else w_int.detach(),
        freq,
        cfg.ref_behavior_index,
        ref_denominator=cfg.ref_denominator,
    )
    neg = budget_normalize(scores, cfg.neg_budget, cfg.freq_exponent)
    if not cfg.wint_through_gradient:
        neg = neg.detach()
    table = NegativeWeightTable(neg=neg, pos=POSITIVE_WEIGHT, mode="intensity")
    table.validate(cfg.neg_budget)
    return table


def behavior_loss(
    user_final: torch.Tensor,
    item_final: torch.Tensor,
    h: torch.Tensor,
    users: torch.Tensor,
    items: torch.Tensor,
    neg_row: torch.Tensor,
    pos_weight: float = POSITIVE_WEIGHT,
    chunk_size: int = 0,
) -> tuple:
    """One behavior's whole-data loss via the Gram decomposition.

    ``users``/``items`` are this behavior's positive edges with ``users``
    non-decreasing. ``chunk_size`` > 0 accumulates the user-side sums in
    fixed slices of the user range; the result is the same full-batch
    quantity either way. Returns (loss, dropped_constant).
    """
    num_users = user_final.shape[0]
    gram_q = item_final.T @ (item_final * neg_row.unsqueeze(1))

    def pos_part(uu, vv):
        s = (user_final[uu] * item_final[vv]) @ h
        c = neg_row[vv]
        return ((pos_weight - c) * s * s - 2.0 * pos_weight * s).sum()

    if chunk_size <= 0 or chunk_size >= num_users:
        gram_p = user_final.T @ user_final
        pos_term = pos_part(users, items) if users.numel() else user_final.new_zeros(())
    else:
        d = user_final.shape[1]
        gram_p = user_final.new_zeros(d, d)
        pos_term = user_final.new_zeros(())
        bounds = torch.arange(0, num_users + chunk_size, chunk_size).clamp(
            max=num_users
        )
        cuts = torch.searchsorted(users, bounds)
        for i in range(len(bounds) - 1):
            lo, hi = int(bounds[i]), int(bounds[i + 1])
            block = user_final[lo:hi]
            gram_p = gram_p + block.T @ block
            a, b = int(cuts[i]), int(cuts[i + 1])
            if b > a:
                pos_term = pos_term + pos_part(users[a:b], items[a:b])

    all_pairs = h @ (gram_p * gram_q) @ h
    dropped = pos_weight * float(users.numel())
    return pos_term + all_pairs, dropped


@dataclass
class LossReport:
    total: torch.Tensor          # scalar, graph-connected
    per_behavior: tuple          # floats, dropped-constant convention
    reg: float
    dropped_constants: tuple

    def scalars(self) -> dict:
        out = {f"L_{k}": self.per_behavior[k] for k in range(len(self.per_behavior))}
        out["reg"] = self.reg
        out["total"] = float(self.total.detach())
        return out


def total_loss(
    params: ParameterSet,
    output: ModelOutput,
    gt: GraphTensors,
    table: NegativeWeightTable,
    cfg: TrainConfig,
) -> LossReport:
    """Weighted multi-behavior loss plus L2 over every trainable tensor."""
    losses = []
    dropped = []
    for k in range(NUM_BEHAVIORS):
        loss_k, const_k = behavior_loss(
            output.user_final,
            output.item_final,
            params.W_pre[k],
            gt.edge_user[k],
            gt.edge_item[k],
            table.neg[k],
            table.pos,
            cfg.chunk_size,
        )
        losses.append(loss_k)
        dropped.append(const_k)
    reg = cfg.reg_weight * sum((t * t).sum() for _, t in params.trainable())
    total = sum(lam * l for lam, l in zip(cfg.lambdas, losses)) + reg
    return LossReport(
        total=total,
        per_behavior=tuple(float(l.detach()) for l in losses),
        reg=float(reg.detach()),
        dropped_constants=tuple(dropped),
    )


def naive_loss_oracle(
    user_final,
    item_final,
    w_pre,
    edges,
    neg,
    pos_weight: float = POSITIVE_WEIGHT,
) -> list:
    """Reference loss: explicit weighted squared error over every pair.

    Pure-Python arithmetic, deliberately sharing no code with
    :func:`behavior_loss`. ``edges`` is a per-behavior sequence of
    (users, items) index vectors. Returns per-behavior losses in the same
    dropped-constant convention. Guarded to small instances.
    """
    u_rows = [[float(x) for x in row] for row in user_final]
    v_rows = [[float(x) for x in row] for row in item_final]
    h_rows = [[float(x) for x in row] for row in w_pre]
    c_rows = [[float(x) for x in row] for row in neg]
    num_users, num_items = len(u_rows), len(v_rows)
    if num_users * num_items > 10_000:
        raise ValueError("oracle is restricted to instances with M * N <= 10000")

    out = []
    for k in range(len(h_rows)):
        users_k = [int(x) for x in edges[k][0]]
        items_k = [int(x) for x in edges[k][1]]
        positives = set(zip(users_k, items_k))
        h = h_rows[k]
        total = 0.0
        for ui in range(num_users):
            for vi in range(num_items):
                score = 0.0
                for dim in range(len(h)):
                    score += h[dim] * u_rows[ui][dim] * v_rows[vi][dim]
                if (ui, vi) in positives:
                    total += pos_weight * (1.0 - score) ** 2
                else:
                    total += c_rows[k][vi] * score * score
        out.append(total - pos_weight * len(positives))
    return out
