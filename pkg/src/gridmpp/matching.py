"""Perfect matchings in regular bipartite multigraphs.

Each matching is obtained with Hopcroft-Karp on the support graph (scipy's
``maximum_bipartite_matching``).  Removing a perfect matching from a
d-regular bipartite multigraph leaves a (d-1)-regular one, so repeating d
times yields a full decomposition (Hall's theorem guarantees existence).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching


class NotRegularError(ValueError):
    pass


class BipartiteMultigraph:
    """Bipartite multigraph with numbered edges; parallel edges are separate ids."""

    def __init__(self, left_count: int, right_count: int | None = None, edges=()):
        self.left_count = int(left_count)
        self.right_count = self.left_count if right_count is None else int(right_count)
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e[:, 0].max() >= self.left_count
                       or e[:, 1].max() >= self.right_count):
            raise ValueError("edge endpoint out of range")
        self.edges = e

    @property
    def n(self) -> int:
        if self.left_count != self.right_count:
            raise NotRegularError("unbalanced bipartite multigraph")
        return self.left_count

    def is_regular(self, d: int) -> bool:
        if self.left_count != self.right_count:
            return False
        left = np.bincount(self.edges[:, 0], minlength=self.left_count)
        right = np.bincount(self.edges[:, 1], minlength=self.right_count)
        return bool((left == d).all() and (right == d).all())

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def degree(self) -> int:
        """Common degree; raises NotRegularError when the graph is not regular."""
        if self.n == 0:
            return 0
        d = int(np.count_nonzero(self.edges[:, 0] == 0))
        if not self.is_regular(d):
            raise NotRegularError("multigraph is not regular")
        return d


@dataclass(frozen=True)
class Matching:
    """Edge ids indexed by left vertex, with the matched right vertex of each."""

    edge_ids: np.ndarray
    right: np.ndarray

    @property
    def pairs(self) -> list[tuple[int, int, int]]:
        return [(u, int(v), int(e)) for u, (v, e) in enumerate(zip(self.right, self.edge_ids))]

    def is_perfect(self, n: int) -> bool:
        return (len(self.right) == n and np.array_equal(np.sort(self.right), np.arange(n)))


def _buckets(graph: BipartiteMultigraph, alive: np.ndarray) -> dict:
    by_pair: dict = defaultdict(list)
    for eid in np.flatnonzero(alive):
        u, v = graph.edges[eid]
        by_pair[(int(u), int(v))].append(int(eid))
    return by_pair


def _match_support(n: int, pairs) -> np.ndarray:
    rows = np.fromiter((p[0] for p in pairs), dtype=np.int64)
    cols = np.fromiter((p[1] for p in pairs), dtype=np.int64)
    m = csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    match = maximum_bipartite_matching(m, perm_type="column")
    if (match < 0).any():
        raise NotRegularError("no perfect matching exists")
    return match


def extract_perfect_matching(graph: BipartiteMultigraph) -> Matching:
    """A perfect matching of a d-regular graph (d >= 1); lowest id among parallel edges."""
    if graph.degree() < 1:
        raise NotRegularError("degree must be at least 1")
    buckets = _buckets(graph, np.ones(graph.edge_count, dtype=bool))
    match = _match_support(graph.n, buckets.keys())
    ids = np.array([min(buckets[(u, int(match[u]))]) for u in range(graph.n)], dtype=np.int64)
    return Matching(ids, match.astype(np.int64))


def decompose_regular(graph: BipartiteMultigraph) -> list[Matching]:
    """Split a d-regular bipartite multigraph into d perfect matchings."""
    d = graph.degree()
    n = graph.n
    buckets = _buckets(graph, np.ones(graph.edge_count, dtype=bool))
    for ids in buckets.values():
        ids.sort(reverse=True)  # pop() yields the lowest id
    out = []
    for _ in range(d):
        match = _match_support(n, buckets.keys())
        chosen = np.empty(n, dtype=np.int64)
        for u in range(n):
            key = (u, int(match[u]))
            ids = buckets[key]
            chosen[u] = ids.pop()
            if not ids:
                del buckets[key]
        out.append(Matching(chosen, match.astype(np.int64)))
    return out


def matching_labels(graph: BipartiteMultigraph) -> np.ndarray:
    """Index of the matching that owns each edge."""
    lab = np.empty(graph.edge_count, dtype=np.int64)
    for i, m in enumerate(decompose_regular(graph)):
        lab[m.edge_ids] = i
    return lab
