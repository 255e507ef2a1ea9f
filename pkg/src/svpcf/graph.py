"""User-item bipartite interaction graph and pagerank centrality."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .data import Dataset


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Undirected graph over ``num_users + num_items`` nodes.

    User ``u`` is node ``u`` and item ``i`` is node ``num_users + i``.
    Repeated ``(u, i)`` interactions collapse into one edge whose
    ``multiplicity`` counts them; ``edge_members`` lists the train positions
    behind each edge (CSR via ``edge_indptr``).
    """

    num_users: int
    num_items: int
    edge_user: np.ndarray
    edge_item: np.ndarray
    multiplicity: np.ndarray
    edge_indptr: np.ndarray
    edge_members: np.ndarray
    # node -> (neighbour, edge id) in CSR form
    adj_indptr: np.ndarray
    adj_nodes: np.ndarray
    adj_edges: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def num_edges(self) -> int:
        return len(self.edge_user)

    def degree(self) -> np.ndarray:
        return np.diff(self.adj_indptr)

    def neighbours(self, node: int) -> np.ndarray:
        return self.adj_nodes[self.adj_indptr[node]:self.adj_indptr[node + 1]]

    def incident_edges(self, node: int) -> np.ndarray:
        return self.adj_edges[self.adj_indptr[node]:self.adj_indptr[node + 1]]

    def members(self, edge: int) -> np.ndarray:
        return self.edge_members[self.edge_indptr[edge]:self.edge_indptr[edge + 1]]

    def edges_members(self, edges) -> np.ndarray:
        edges = np.asarray(edges, dtype=np.int64)
        if len(edges) == 0:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.members(e) for e in edges])

    def adjacency(self, weighted: bool = True) -> sp.csr_matrix:
        n = self.num_nodes
        w = self.multiplicity.astype(float) if weighted else np.ones(self.num_edges)
        rows = np.concatenate([self.edge_user, self.num_users + self.edge_item])
        cols = np.concatenate([self.num_users + self.edge_item, self.edge_user])
        return sp.csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))

    @cached_property
    def components(self) -> np.ndarray:
        from scipy.sparse.csgraph import connected_components
        return connected_components(self.adjacency(weighted=False), directed=False)[1]


def build_graph(train: Dataset) -> BipartiteGraph:
    if len(train) == 0:
        raise ValueError("cannot build a graph from an empty train set")
    nu, ni = train.num_users, train.num_items
    key = train.users * ni + train.items
    order = np.argsort(key, kind="stable")
    uniq, start, mult = np.unique(key[order], return_index=True, return_counts=True)
    edge_user, edge_item = uniq // ni, uniq % ni
    edge_indptr = np.append(start, len(order)).astype(np.int64)

    n_edges = len(uniq)
    ends = np.concatenate([edge_user, nu + edge_item])
    others = np.concatenate([nu + edge_item, edge_user])
    eids = np.concatenate([np.arange(n_edges), np.arange(n_edges)])
    by_node = np.lexsort((others, ends))
    adj_indptr = np.zeros(nu + ni + 1, dtype=np.int64)
    np.cumsum(np.bincount(ends, minlength=nu + ni), out=adj_indptr[1:])

    arrays = dict(
        edge_user=edge_user, edge_item=edge_item, multiplicity=mult,
        edge_indptr=edge_indptr, edge_members=order.astype(np.int64),
        adj_indptr=adj_indptr, adj_nodes=others[by_node].astype(np.int64),
        adj_edges=eids[by_node].astype(np.int64),
    )
    for a in arrays.values():
        a.setflags(write=False)
    return BipartiteGraph(nu, ni, **arrays)


@dataclass(frozen=True)
class PagerankResult:
    scores: np.ndarray
    iterations: int
    converged: bool


def pagerank(graph: BipartiteGraph, damping: float = 0.85, tol: float = 1e-8,
             max_iter: int = 100, weighted: bool = True) -> PagerankResult:
    """Power-iteration pagerank.

    Stops once the L1 change between iterates drops below ``tol``; after
    ``max_iter`` iterations the last iterate is returned with
    ``converged=False``.  Mass on isolated nodes is spread uniformly.
    """
    n = graph.num_nodes
    a = graph.adjacency(weighted)
    out = np.asarray(a.sum(axis=1)).ravel()
    dangling = out == 0
    inv = np.divide(1.0, out, out=np.zeros(n), where=~dangling)
    transition_t = (sp.diags(inv) @ a).T.tocsr()

    x = np.full(n, 1.0 / n)
    for it in range(1, max_iter + 1):
        prev = x
        x = damping * (transition_t @ prev + prev[dangling].sum() / n) + (1.0 - damping) / n
        x /= x.sum()
        if np.abs(x - prev).sum() < tol:
            return PagerankResult(x, it, True)
    return PagerankResult(x, max_iter, False)
