"""Shared builders for the test suite."""

import numpy as np
import torch

from mbrec.data import InteractionLog


def make_log(rows, num_users=None, num_items=None) -> InteractionLog:
    """Build an InteractionLog from (user, item, behavior, timestamp) rows."""
    if rows:
        cols = list(zip(*rows))
        user, item, behavior, ts = (np.asarray(c, dtype=np.int64) for c in cols)
    else:
        user = item = behavior = ts = np.zeros(0, dtype=np.int64)
    if num_users is None:
        num_users = int(user.max()) + 1 if len(user) else 0
    if num_items is None:
        num_items = int(item.max()) + 1 if len(item) else 0
    log = InteractionLog(
        user=user,
        item=item,
        behavior=behavior,
        timestamp=ts,
        num_users=num_users,
        num_items=num_items,
    )
    log.validate()
    return log


def random_log(
    rng: np.random.Generator,
    num_users: int,
    num_items: int,
    num_events: int,
    ensure_purchases: bool = True,
) -> InteractionLog:
    """Random event soup; optionally guarantees two purchases per user."""
    rows = []
    for _ in range(num_events):
        rows.append(
            (
                int(rng.integers(num_users)),
                int(rng.integers(num_items)),
                int(rng.integers(3)),
                int(rng.integers(1, 10_000)),
            )
        )
    if ensure_purchases:
        for u in range(num_users):
            pair = rng.choice(num_items, size=2, replace=False)
            for v in pair:
                rows.append((u, int(v), 2, int(rng.integers(10_000, 20_000))))
    return make_log(rows, num_users=num_users, num_items=num_items)


def seeded_tensor(shape, seed, scale=1.0, dtype=torch.float64) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=gen, dtype=dtype) * scale
