"""User-item bipartite graph and truncated uniform random walks over it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import InteractionTable
from ..errors import EmptyInput

USER_PREFIX = "u:"
ITEM_PREFIX = "i:"


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """CSR adjacency over nodes 0..n_users-1 (users) then n_users.. (items).

    Only nodes with at least one edge exist, so there are no isolated nodes.
    """

    user_ids: tuple
    item_ids: tuple
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_nodes(self) -> int:
        return len(self.user_ids) + len(self.item_ids)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def node_names(self) -> list[str]:
        return [USER_PREFIX + u for u in self.user_ids] + [ITEM_PREFIX + i for i in self.item_ids]

    def is_user(self, nodes) -> np.ndarray:
        return np.asarray(nodes) < self.num_users

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node] : self.indptr[node + 1]]

    def item_node(self, item_id: str) -> int:
        return self.num_users + self.item_ids.index(item_id)


def build_graph(table: InteractionTable) -> BipartiteGraph:
    """One undirected edge per distinct rated (user, item) pair."""
    if len(table) == 0:
        raise EmptyInput("cannot build a graph from an empty table")
    user_ids = tuple(dict.fromkeys(table.users.tolist()))
    item_ids = tuple(dict.fromkeys(table.items.tolist()))
    uidx = {u: k for k, u in enumerate(user_ids)}
    iidx = {i: k for k, i in enumerate(item_ids)}
    n_users = len(user_ids)
    edges = {(uidx[u], n_users + iidx[i]) for u, i in zip(table.users.tolist(), table.items.tolist())}
    edges = np.array(sorted(edges), dtype=np.int64)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    n_nodes = n_users + len(item_ids)
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n_nodes), out=indptr[1:])
    return BipartiteGraph(user_ids, item_ids, indptr, dst)


def generate_walks(
    graph: BipartiteGraph, walks_per_node: int = 10, walk_length: int = 40, seed: int = 0
) -> np.ndarray:
    """``walks_per_node`` uniform random walks from every node, as an int array.

    Row ``r * num_nodes + v`` is round ``r``'s walk started at node ``v``.
    """
    if graph.num_nodes == 0:
        raise EmptyInput("graph has no nodes")
    rng = np.random.default_rng(seed)
    starts = np.tile(np.arange(graph.num_nodes), walks_per_node)
    walks = np.empty((len(starts), walk_length), dtype=np.int64)
    if walk_length == 0:
        return walks
    walks[:, 0] = starts
    deg = graph.degrees
    for step in range(1, walk_length):
        cur = walks[:, step - 1]
        offset = (rng.random(len(cur)) * deg[cur]).astype(np.int64)
        walks[:, step] = graph.indices[graph.indptr[cur] + offset]
    return walks
