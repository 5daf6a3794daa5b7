"""Leave-last-out top-K evaluation over the full item catalog.

Each evaluation user has one held-out item; the model's scores for that
user are ranked against every item except the user's training positives
(and optionally the validation item). Ties are broken by ascending item id,
the held-out item keeping its own id in the comparison, so ranks are exact
integers independent of sort stability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import Behavior
from .graph import BehaviorGraph
from .model import ModelOutput


def rank_of_heldout(scores: np.ndarray, held: int, exclude=()) -> int:
    """1-based rank of the held-out item among all non-excluded items."""
    mask = np.ones(scores.shape[0], dtype=bool)
    excl = np.asarray(list(exclude), dtype=np.int64)
    if excl.size:
        mask[excl] = False
    mask[held] = True
    target = scores[held]
    greater = int(np.count_nonzero((scores > target) & mask))
    ids = np.arange(scores.shape[0])
    ties_before = int(
        np.count_nonzero((scores == target) & mask & (ids < held))
    )
    return 1 + greater + ties_before


def metrics_from_ranks(ranks: np.ndarray, ks) -> tuple:
    """(hit-rate, NDCG) per cutoff; single-positive NDCG is 1/log2(rank+1)."""
    hr = {}
    ndcg = {}
    for k in ks:
        hits = ranks <= k
        hr[k] = float(np.mean(hits)) if ranks.size else 0.0
        gains = np.where(hits, 1.0 / np.log2(ranks + 1.0), 0.0)
        ndcg[k] = float(np.mean(gains)) if ranks.size else 0.0
    return hr, ndcg


@dataclass
class EvalResult:
    num_users: int
    hr: dict
    ndcg: dict
    ranks: np.ndarray

    def as_dict(self) -> dict:
        out = {"users": self.num_users}
        for k in sorted(self.hr):
            out[f"HR@{k}"] = self.hr[k]
        for k in sorted(self.ndcg):
            out[f"NDCG@{k}"] = self.ndcg[k]
        return out

    def format_row(self) -> str:
        parts = [f"users={self.num_users}"]
        for k in sorted(self.hr):
            parts.append(f"HR@{k}={self.hr[k]:.4f}")
        for k in sorted(self.ndcg):
            parts.append(f"NDCG@{k}={self.ndcg[k]:.4f}")
        return "  ".join(parts)


def evaluate(
    output: ModelOutput,
    w_pre: torch.Tensor,
    graph: BehaviorGraph,
    heldout: dict,
    ks=(10, 50, 100),
    behavior: int = int(Behavior.PURCHASE),
    extra_exclude: dict | None = None,
    batch_size: int = 1024,
) -> EvalResult:
    """Rank each user's held-out item against the full catalog.

    heldout maps user -> item. Training edges of the chosen behavior are
    excluded from each user's candidate set; extra_exclude can remove one
    more item per user (the validation item during test scoring).
    """
    users = sorted(heldout)
    ranks = np.zeros(len(users), dtype=np.int64)
    user_final = output.user_final.detach()
    item_final = output.item_final.detach()
    head = w_pre[behavior].detach()
    for start in range(0, len(users), batch_size):
        chunk = users[start:start + batch_size]
        idx = torch.tensor(chunk, dtype=torch.long)
        block = ((user_final[idx] * head) @ item_final.T).cpu().numpy()
        for row, u in enumerate(chunk):
            exclude = list(graph.items_of_user(u, behavior))
            if extra_exclude is not None and u in extra_exclude:
                exclude.append(extra_exclude[u])
            ranks[start + row] = rank_of_heldout(
                block[row], heldout[u], exclude
            )
    hr, ndcg = metrics_from_ranks(ranks, ks)
    return EvalResult(num_users=len(users), hr=hr, ndcg=ndcg, ranks=ranks)
