"""Per-behavior bipartite adjacency over the train split.

Adjacency is stored CSR-style on both sides (items per user, users per
item) with neighbor lists sorted ascending, plus cached degree tables.
Graphs are immutable once built and safe to share read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import BEHAVIOR_NAMES, NUM_BEHAVIORS, Behavior, InteractionLog, deduplicate


@dataclass
class _Side:
    """CSR adjacency for one behavior, one direction."""

    indptr: np.ndarray
    neighbors: np.ndarray

    def row(self, i: int) -> np.ndarray:
        return self.neighbors[self.indptr[i] : self.indptr[i + 1]]


def _csr(src: np.ndarray, dst: np.ndarray, n_src: int) -> _Side:
    order = np.lexsort((dst, src))
    src_s, dst_s = src[order], dst[order]
    indptr = np.zeros(n_src + 1, dtype=np.int64)
    np.add.at(indptr, src_s + 1, 1)
    np.cumsum(indptr, out=indptr)
    return _Side(indptr=indptr, neighbors=dst_s)


@dataclass
class BehaviorGraph:
    num_users: int
    num_items: int
    # edge arrays per behavior, sorted by (user, item)
    edge_user: list[np.ndarray]
    edge_item: list[np.ndarray]
    user_side: list[_Side] = field(repr=False)
    item_side: list[_Side] = field(repr=False)
    user_deg: np.ndarray = field(repr=False)  # int64 [K, num_users]
    item_deg: np.ndarray = field(repr=False)  # int64 [K, num_items]

    def edge_count(self, k: int) -> int:
        return len(self.edge_user[k])

    @property
    def total_edges(self) -> int:
        return sum(len(e) for e in self.edge_user)

    def items_of_user(self, u: int, k: int) -> np.ndarray:
        return self.user_side[k].row(u)

    def users_of_item(self, v: int, k: int) -> np.ndarray:
        return self.item_side[k].row(v)

    def has_edge(self, u: int, v: int, k: int) -> bool:
        row = self.items_of_user(u, k)
        pos = np.searchsorted(row, v)
        return pos < len(row) and row[pos] == v

    def edge_neighborhood_size(self, u: int, v: int, k: int) -> int:
        """Degree sum of the edge's endpoints under behavior k.

        This is the normalizer denominator for edge-context updates.
        """
        if not self.has_edge(u, v, k):
            raise KeyError(f"no {BEHAVIOR_NAMES[k]} edge ({u}, {v})")
        return int(self.user_deg[k, u] + self.item_deg[k, v])

    def adjacent_edges(
        self, u: int, v: int, k: int, include_self: bool = False
    ) -> list[tuple[int, int]]:
        """Edges sharing u or v under behavior k, excluding (u, v) by default."""
        if not self.has_edge(u, v, k):
            raise KeyError(f"no {BEHAVIOR_NAMES[k]} edge ({u}, {v})")
        edges = [(u, int(w)) for w in self.items_of_user(u, k)]
        edges += [(int(w), v) for w in self.users_of_item(v, k) if w != u]
        if not include_self:
            edges.remove((u, v))
        return edges

    def edge_norm_mean(self, k: int) -> float:
        """Mean of 1 / (deg(u) + deg(v)) over behavior-k edges; 0 if empty."""
        if self.edge_count(k) == 0:
            return 0.0
        denom = (
            self.user_deg[k, self.edge_user[k]] + self.item_deg[k, self.edge_item[k]]
        ).astype(np.float64)
        return float(np.mean(1.0 / denom))

    def dump_edges(self) -> str:
        """Serialize as lexicographically sorted `behavior \\t user \\t item` lines."""
        lines = []
        for k in range(NUM_BEHAVIORS):
            name = BEHAVIOR_NAMES[k]
            for u, v in zip(self.edge_user[k], self.edge_item[k]):
                lines.append(f"{name}\t{u}\t{v}")
        lines.sort()
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_edge_dump(cls, text: str, num_users: int, num_items: int) -> "BehaviorGraph":
        users, items, behaviors = [], [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            name, u, v = line.split("\t")
            behaviors.append(int(Behavior.parse(name)))
            users.append(int(u))
            items.append(int(v))
        return _build(
            np.asarray(users, dtype=np.int64),
            np.asarray(items, dtype=np.int64),
            np.asarray(behaviors, dtype=np.int64),
            num_users,
            num_items,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, BehaviorGraph):
            return NotImplemented
        if (self.num_users, self.num_items) != (other.num_users, other.num_items):
            return False
        return all(
            np.array_equal(self.edge_user[k], other.edge_user[k])
            and np.array_equal(self.edge_item[k], other.edge_item[k])
            for k in range(NUM_BEHAVIORS)
        )


def _build(
    user: np.ndarray,
    item: np.ndarray,
    behavior: np.ndarray,
    num_users: int,
    num_items: int,
) -> BehaviorGraph:
    edge_user, edge_item, user_side, item_side = [], [], [], []
    user_deg = np.zeros((NUM_BEHAVIORS, num_users), dtype=np.int64)
    item_deg = np.zeros((NUM_BEHAVIORS, num_items), dtype=np.int64)
    for k in range(NUM_BEHAVIORS):
        mask = behavior == k
        u_k, v_k = user[mask], item[mask]
        order = np.lexsort((v_k, u_k))
        u_k, v_k = u_k[order], v_k[order]
        edge_user.append(u_k)
        edge_item.append(v_k)
        user_side.append(_csr(u_k, v_k, num_users))
        item_side.append(_csr(v_k, u_k, num_items))
        user_deg[k] = np.bincount(u_k, minlength=num_users)
        item_deg[k] = np.bincount(v_k, minlength=num_items)
    return BehaviorGraph(
        num_users=num_users,
        num_items=num_items,
        edge_user=edge_user,
        edge_item=edge_item,
        user_side=user_side,
        item_side=item_side,
        user_deg=user_deg,
        item_deg=item_deg,
    )


def build_graph(train: InteractionLog) -> BehaviorGraph:
    """Build the per-behavior bipartite graph from a (binarized) train log."""
    train = deduplicate(train)
    return _build(
        train.user, train.item, train.behavior, train.num_users, train.num_items
    )
