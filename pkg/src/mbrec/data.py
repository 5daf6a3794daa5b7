"""Multi-behavior interaction logs: loading, activity filtering, temporal splits.

The raw input is a UTF-8 tab-separated file with one event per row:
``user \\t item \\t behavior \\t timestamp`` where behavior is one of
view / add / purchase (case-insensitive) and timestamp is integer seconds.
Duplicate (user, item, behavior) events collapse to a single binary edge;
the latest timestamp wins, so temporal ordering of repeated events is kept.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

NUM_BEHAVIORS = 3
BEHAVIOR_NAMES = ("view", "add", "purchase")


class Behavior(IntEnum):
    VIEW = 0
    ADD = 1
    PURCHASE = 2

    @classmethod
    def parse(cls, label: str) -> "Behavior":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise SchemaError(f"unknown behavior label {label!r}") from None

    @property
    def label(self) -> str:
        return BEHAVIOR_NAMES[self.value]


class DatasetError(ValueError):
    """Base class for dataset ingestion/processing failures."""


class ParseError(DatasetError):
    """A row failed to parse; message carries the 1-based line number."""


class SchemaError(DatasetError):
    """A row carried an unrecognized behavior label or bad column layout."""


class EmptyDatasetError(DatasetError):
    """Filtering removed every user or item."""


@dataclass
class ColumnSchema:
    """Zero-based column positions in the raw TSV."""

    user: int = 0
    item: int = 1
    behavior: int = 2
    timestamp: int = 3

    @property
    def min_columns(self) -> int:
        return max(self.user, self.item, self.behavior, self.timestamp) + 1


@dataclass
class InteractionLog:
    """Timestamped (user, item, behavior) events over contiguous integer ids.

    Events are stored as parallel arrays. ``user_ids`` / ``item_ids`` map the
    contiguous indices back to the original labels when the log came from a
    raw file; logs built programmatically may leave them as None.
    """

    user: np.ndarray
    item: np.ndarray
    behavior: np.ndarray
    timestamp: np.ndarray
    num_users: int
    num_items: int
    user_ids: list | None = None
    item_ids: list | None = None
    deduplicated: bool = False

    def __len__(self) -> int:
        return len(self.user)

    def validate(self) -> None:
        n = len(self.user)
        if not (len(self.item) == len(self.behavior) == len(self.timestamp) == n):
            raise DatasetError("event arrays have mismatched lengths")
        if n:
            if self.user.min() < 0 or self.user.max() >= self.num_users:
                raise DatasetError("user index out of range")
            if self.item.min() < 0 or self.item.max() >= self.num_items:
                raise DatasetError("item index out of range")
            if self.behavior.min() < 0 or self.behavior.max() >= NUM_BEHAVIORS:
                raise DatasetError("behavior index out of range")

    def counts_by_behavior(self) -> dict[str, int]:
        counts = np.bincount(self.behavior, minlength=NUM_BEHAVIORS)
        return {name: int(counts[k]) for k, name in enumerate(BEHAVIOR_NAMES)}


@dataclass
class SplitBundle:
    """Leave-last-out split: per-user held-out purchases plus the train log."""

    train: InteractionLog
    valid: dict[int, int]
    test: dict[int, int]
    skipped_users: int = 0


@dataclass
class FrequencyTable:
    """Per-behavior, per-item distinct-user interaction counts from train."""

    counts: np.ndarray  # int64 [NUM_BEHAVIORS, num_items]

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def _empty_log() -> InteractionLog:
    z = np.zeros(0, dtype=np.int64)
    return InteractionLog(z, z.copy(), z.copy(), z.copy(), 0, 0, [], [])


def load_interactions(path, schema: ColumnSchema | None = None) -> InteractionLog:
    """Read a raw TSV and re-index users/items to contiguous zero-based ids.

    Ids are assigned in order of first appearance; original labels are kept
    in ``user_ids`` / ``item_ids`` for reporting.
    """
    schema = schema or ColumnSchema()
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users, items, behaviors, timestamps = [], [], [], []

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) < schema.min_columns:
                raise ParseError(
                    f"line {lineno}: expected at least {schema.min_columns} "
                    f"tab-separated columns, got {len(cols)}"
                )
            try:
                beh = Behavior.parse(cols[schema.behavior])
            except SchemaError as exc:
                raise SchemaError(f"line {lineno}: {exc}") from None
            try:
                ts = int(cols[schema.timestamp])
            except ValueError:
                raise ParseError(
                    f"line {lineno}: bad timestamp {cols[schema.timestamp]!r}"
                ) from None
            u_raw, v_raw = cols[schema.user], cols[schema.item]
            u = user_index.setdefault(u_raw, len(user_index))
            v = item_index.setdefault(v_raw, len(item_index))
            users.append(u)
            items.append(v)
            behaviors.append(int(beh))
            timestamps.append(ts)

    if not users:
        return _empty_log()
    log = InteractionLog(
        np.asarray(users, dtype=np.int64),
        np.asarray(items, dtype=np.int64),
        np.asarray(behaviors, dtype=np.int64),
        np.asarray(timestamps, dtype=np.int64),
        num_users=len(user_index),
        num_items=len(item_index),
        user_ids=list(user_index),
        item_ids=list(item_index),
    )
    log.validate()
    return log


def write_interactions(log: InteractionLog, path) -> None:
    """Write a log as TSV using its internal contiguous ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, v, k, t in zip(log.user, log.item, log.behavior, log.timestamp):
            fh.write(f"{u}\t{v}\t{BEHAVIOR_NAMES[k]}\t{t}\n")


def load_indexed_interactions(path, num_users: int, num_items: int) -> InteractionLog:
    """Read a TSV whose user/item columns are already contiguous ids.

    Unlike :func:`load_interactions` this performs no re-indexing, so ids are
    preserved exactly; used to reload prepared splits.
    """
    users, items, behaviors, timestamps = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) < 4:
                raise ParseError(f"line {lineno}: expected 4 columns, got {len(cols)}")
            try:
                beh = Behavior.parse(cols[2])
            except SchemaError as exc:
                raise SchemaError(f"line {lineno}: {exc}") from None
            try:
                users.append(int(cols[0]))
                items.append(int(cols[1]))
                timestamps.append(int(cols[3]))
            except ValueError:
                raise ParseError(f"line {lineno}: bad integer field") from None
            behaviors.append(int(beh))
    log = InteractionLog(
        np.asarray(users, dtype=np.int64) if users else np.zeros(0, dtype=np.int64),
        np.asarray(items, dtype=np.int64) if items else np.zeros(0, dtype=np.int64),
        np.asarray(behaviors, dtype=np.int64) if behaviors else np.zeros(0, dtype=np.int64),
        np.asarray(timestamps, dtype=np.int64) if timestamps else np.zeros(0, dtype=np.int64),
        num_users=num_users,
        num_items=num_items,
    )
    log.validate()
    return log


def deduplicate(log: InteractionLog) -> InteractionLog:
    """Collapse duplicate (user, item, behavior) events to one binary edge.

    The surviving edge carries the latest timestamp so that "last purchase"
    ordering is preserved through binarization.
    """
    if log.deduplicated or len(log) == 0:
        return replace(log, deduplicated=True)
    # lexsort is stable; order by timestamp last so the final entry per key
    # carries the max timestamp
    order = np.lexsort((log.timestamp, log.item, log.behavior, log.user))
    u, v, k, t = (a[order] for a in (log.user, log.item, log.behavior, log.timestamp))
    keep = np.ones(len(u), dtype=bool)
    same = (u[1:] == u[:-1]) & (v[1:] == v[:-1]) & (k[1:] == k[:-1])
    keep[:-1] = ~same
    return replace(
        log,
        user=u[keep],
        item=v[keep],
        behavior=k[keep],
        timestamp=t[keep],
        deduplicated=True,
    )


def filter_activity(
    log: InteractionLog,
    min_interactions: int = 10,
    min_purchases: int = 5,
) -> InteractionLog:
    """Iteratively drop inactive users/items, then re-index the survivors.

    A user or item survives a round when it has strictly more than
    ``min_interactions`` distinct edges and at least ``min_purchases``
    distinct purchase edges among the currently surviving counterpart
    entities. Rounds repeat until a fixpoint.
    """
    log = deduplicate(log)
    if len(log) == 0:
        raise EmptyDatasetError("no events to filter")

    keep_u = np.ones(log.num_users, dtype=bool)
    keep_v = np.ones(log.num_items, dtype=bool)
    is_purchase = log.behavior == Behavior.PURCHASE

    while True:
        alive = keep_u[log.user] & keep_v[log.item]
        inter_u = np.bincount(log.user[alive], minlength=log.num_users)
        inter_v = np.bincount(log.item[alive], minlength=log.num_items)
        alive_p = alive & is_purchase
        purch_u = np.bincount(log.user[alive_p], minlength=log.num_users)
        purch_v = np.bincount(log.item[alive_p], minlength=log.num_items)
        new_u = keep_u & (inter_u > min_interactions) & (purch_u >= min_purchases)
        new_v = keep_v & (inter_v > min_interactions) & (purch_v >= min_purchases)
        if np.array_equal(new_u, keep_u) and np.array_equal(new_v, keep_v):
            break
        keep_u, keep_v = new_u, new_v

    if not keep_u.any() or not keep_v.any():
        raise EmptyDatasetError(
            "activity filtering removed every user or item "
            f"(min_interactions={min_interactions}, min_purchases={min_purchases})"
        )

    # survivors re-indexed in ascending old-id order
    u_map = np.cumsum(keep_u) - 1
    v_map = np.cumsum(keep_v) - 1
    alive = keep_u[log.user] & keep_v[log.item]
    new_user_ids = (
        [log.user_ids[i] for i in np.flatnonzero(keep_u)] if log.user_ids else None
    )
    new_item_ids = (
        [log.item_ids[i] for i in np.flatnonzero(keep_v)] if log.item_ids else None
    )
    return InteractionLog(
        user=u_map[log.user[alive]],
        item=v_map[log.item[alive]],
        behavior=log.behavior[alive],
        timestamp=log.timestamp[alive],
        num_users=int(keep_u.sum()),
        num_items=int(keep_v.sum()),
        user_ids=new_user_ids,
        item_ids=new_item_ids,
        deduplicated=True,
    )


def temporal_split(log: InteractionLog) -> SplitBundle:
    """Hold out each user's two latest purchases: last to test, prior to valid.

    Timestamp ties among a user's purchases break by item id, larger id
    taking the later slot. Users with fewer than two purchases keep all
    events in train and are counted in ``skipped_users``.
    """
    log = deduplicate(log)
    is_purchase = log.behavior == Behavior.PURCHASE
    p_idx = np.flatnonzero(is_purchase)

    valid: dict[int, int] = {}
    test: dict[int, int] = {}
    held_out = np.zeros(len(log), dtype=bool)

    if len(p_idx):
        order = np.lexsort((log.item[p_idx], log.timestamp[p_idx], log.user[p_idx]))
        p_sorted = p_idx[order]
        users_sorted = log.user[p_sorted]
        starts = np.flatnonzero(np.r_[True, users_sorted[1:] != users_sorted[:-1]])
        ends = np.r_[starts[1:], len(p_sorted)]
        for s, e in zip(starts, ends):
            if e - s < 2:
                continue
            u = int(users_sorted[s])
            test_ev = p_sorted[e - 1]
            valid_ev = p_sorted[e - 2]
            test[u] = int(log.item[test_ev])
            valid[u] = int(log.item[valid_ev])
            held_out[test_ev] = held_out[valid_ev] = True

    # users present in the log but lacking two purchases stay train-only
    skipped = int(len(np.unique(log.user))) - len(test)

    train = replace(
        log,
        user=log.user[~held_out],
        item=log.item[~held_out],
        behavior=log.behavior[~held_out],
        timestamp=log.timestamp[~held_out],
    )

    # a user whose only events were the two held-out purchases has nothing
    # left to learn from; drop them from evaluation
    train_users = set(np.unique(train.user).tolist())
    gone = [u for u in test if u not in train_users]
    if gone:
        warnings.warn(
            f"{len(gone)} user(s) had no train events left after holdout; "
            "excluded from valid/test"
        )
        for u in gone:
            del test[u]
            del valid[u]
    return SplitBundle(train=train, valid=valid, test=test, skipped_users=skipped)


def behavior_frequency(train: InteractionLog) -> FrequencyTable:
    """Count, per behavior, how many distinct users interacted with each item."""
    train = deduplicate(train)
    counts = np.zeros((NUM_BEHAVIORS, train.num_items), dtype=np.int64)
    if len(train):
        flat = train.behavior * train.num_items + train.item
        binc = np.bincount(flat, minlength=NUM_BEHAVIORS * train.num_items)
        counts = binc.reshape(NUM_BEHAVIORS, train.num_items)
    return FrequencyTable(counts=counts)


@dataclass
class PreparedData:
    """Everything the training pipeline needs, as written by ``prepare``."""

    train: InteractionLog
    valid: dict[int, int]
    test: dict[int, int]
    freq: FrequencyTable
    stats: dict = field(default_factory=dict)


def prepare_dataset(
    log: InteractionLog,
    min_interactions: int = 10,
    min_purchases: int = 5,
    apply_filter: bool = True,
) -> PreparedData:
    """Filter, split and count a raw log in one step."""
    if apply_filter:
        log = filter_activity(log, min_interactions, min_purchases)
    else:
        log = deduplicate(log)
    bundle = temporal_split(log)
    freq = behavior_frequency(bundle.train)
    counts = bundle.train.counts_by_behavior()
    total = sum(counts.values())
    stats = {
        "num_users": log.num_users,
        "num_items": log.num_items,
        "events": counts,
        "view_ratio": (counts["view"] / total) if total else 0.0,
        "eval_users": len(bundle.test),
        "skipped_users": bundle.skipped_users,
    }
    return PreparedData(bundle.train, bundle.valid, bundle.test, freq, stats)


def save_prepared(data: PreparedData, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(data.train, out / "train.tsv")
    for name, mapping in (("valid", data.valid), ("test", data.test)):
        with open(out / f"{name}.tsv", "w", encoding="utf-8") as fh:
            for u in sorted(mapping):
                fh.write(f"{u}\t{mapping[u]}\n")
    with open(out / "freq.tsv", "w", encoding="utf-8") as fh:
        for k, name in enumerate(BEHAVIOR_NAMES):
            for v in np.flatnonzero(data.freq.counts[k]):
                fh.write(f"{name}\t{v}\t{data.freq.counts[k][v]}\n")
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(data.stats, fh, indent=2)
        fh.write("\n")


def load_prepared(in_dir) -> PreparedData:
    src = Path(in_dir)
    with open(src / "stats.json", encoding="utf-8") as fh:
        stats = json.load(fh)
    num_users, num_items = stats["num_users"], stats["num_items"]
    train = load_indexed_interactions(src / "train.tsv", num_users, num_items)
    train.deduplicated = True

    def read_map(path) -> dict[int, int]:
        mapping = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    u, v = line.split("\t")
                    mapping[int(u)] = int(v)
        return mapping

    counts = np.zeros((NUM_BEHAVIORS, num_items), dtype=np.int64)
    with open(src / "freq.tsv", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                name, v, c = line.rstrip("\n").split("\t")
                counts[int(Behavior.parse(name)), int(v)] = int(c)
    return PreparedData(
        train=train,
        valid=read_map(src / "valid.tsv"),
        test=read_map(src / "test.tsv"),
        freq=FrequencyTable(counts=counts),
        stats=stats,
    )
