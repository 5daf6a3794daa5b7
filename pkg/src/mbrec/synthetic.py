"""Synthetic multi-behavior dataset with planted purchase intent.

Users fall into equal-size groups, each owning a block of the item catalog.
Purchases and cart-adds stay inside the user's own block, while views spill
onto a small set of globally popular distractor items and a sprinkle of
other-block items. Distractors are viewed by most of the population but
purchased by almost nobody, so raw view frequency actively misleads
purchase ranking. Event counts are balanced to three views per non-view
interaction, and every user keeps at least four purchases so the temporal
split can hold two of them out.
"""

from __future__ import annotations

import numpy as np

from .data import Behavior, InteractionLog

TIME_LO = 1_000
TIME_HI = 1_000_000


def synthetic_log(
    num_users: int = 500,
    num_items: int = 200,
    num_groups: int = 10,
    num_distractors: int = 20,
    seed: int = 0,
    purchases_per_user: tuple = (4, 8),
    extra_adds: tuple = (0, 2),
    distractor_views: tuple = (10, 14),
    distractor_buyers: int = 4,
    views_per_nonview: float | tuple = 3.0,
) -> InteractionLog:
    if num_items <= num_distractors:
        raise ValueError("need more items than distractors")
    if np.isscalar(views_per_nonview):
        view_mult = (float(views_per_nonview), float(views_per_nonview))
    else:
        view_mult = (float(views_per_nonview[0]), float(views_per_nonview[1]))
    mult_mean = 0.5 * (view_mult[0] + view_mult[1])
    block_items = num_items - num_distractors
    if block_items % num_groups:
        raise ValueError("non-distractor items must split evenly into groups")
    block_size = block_items // num_groups
    if purchases_per_user[1] + extra_adds[1] > block_size:
        raise ValueError("block too small for the requested adds and purchases")

    rng = np.random.default_rng(seed)
    distractor_ids = np.arange(block_items, num_items)
    users, items, behaviors, stamps = [], [], [], []

    def emit(u, v, k, t):
        users.append(u)
        items.append(v)
        behaviors.append(int(k))
        stamps.append(int(t))

    for u in range(num_users):
        group = u % num_groups
        block = np.arange(group * block_size, (group + 1) * block_size)

        n_p = int(rng.integers(purchases_per_user[0], purchases_per_user[1] + 1))
        bought = rng.choice(block, size=n_p, replace=False)
        n_extra = int(rng.integers(extra_adds[0], extra_adds[1] + 1))
        pool = np.setdiff1d(block, bought)
        added = np.concatenate(
            [bought, rng.choice(pool, size=n_extra, replace=False)]
        )

        for v in bought:
            emit(u, v, Behavior.PURCHASE, rng.integers(TIME_LO, TIME_HI))
        for v in added:
            emit(u, v, Behavior.ADD, rng.integers(TIME_LO, TIME_HI))

        # views: the funnel itself, the shared distractors, then filler
        viewed = set(int(v) for v in added)
        if view_mult[0] == view_mult[1]:
            mult = view_mult[0]
        else:
            mult = float(rng.uniform(view_mult[0], view_mult[1]))
        n_d = int(rng.integers(distractor_views[0], distractor_views[1] + 1))
        n_d = min(int(round(n_d * mult / mult_mean)), num_distractors)
        for v in rng.choice(distractor_ids, size=n_d, replace=False):
            viewed.add(int(v))
        target = int(round(mult * (n_p + len(added))))
        own_pool = np.setdiff1d(block, added)
        rng.shuffle(own_pool)
        for v in own_pool:
            if len(viewed) >= target:
                break
            viewed.add(int(v))
        while len(viewed) < target:
            v = int(rng.integers(0, block_items))
            viewed.add(v)
        for v in sorted(viewed):
            emit(u, v, Behavior.VIEW, rng.integers(TIME_LO, TIME_HI))

    # a few stray purchases keep distractors inside the purchase-frequency
    # table; early timestamps keep them out of the held-out slots
    for v in distractor_ids:
        for u in rng.choice(num_users, size=distractor_buyers, replace=False):
            emit(int(u), int(v), Behavior.PURCHASE, rng.integers(1, TIME_LO))

    return InteractionLog(
        user=np.asarray(users, dtype=np.int64),
        item=np.asarray(items, dtype=np.int64),
        behavior=np.asarray(behaviors, dtype=np.int64),
        timestamp=np.asarray(stamps, dtype=np.int64),
        num_users=num_users,
        num_items=num_items,
        user_ids=[str(u) for u in range(num_users)],
        item_ids=[str(v) for v in range(num_items)],
        deduplicated=False,
    )
