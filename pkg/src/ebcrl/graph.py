"""Directed acyclic graphs over latent causal variables.

Nodes are 0-based integers. Graphs are immutable after construction and
safe to share across workers.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field


class CycleError(Exception):
    """Raised when an edge set contains a directed cycle."""


@dataclass(frozen=True)
class Dag:
    """Latent causal graph with a cached topological order.

    Attributes
    ----------
    n_nodes : number of latent variables.
    edges : frozenset of (k, j) pairs meaning k -> j.
    topo_order : tuple placing every parent before its children.
    """

    n_nodes: int
    edges: frozenset = field(default_factory=frozenset)
    topo_order: tuple = ()

    def parent_lists(self):
        out = [[] for _ in range(self.n_nodes)]
        for k, j in self.edges:
            out[j].append(k)
        return [sorted(p) for p in out]

    def child_lists(self):
        out = [[] for _ in range(self.n_nodes)]
        for k, j in self.edges:
            out[k].append(j)
        return [sorted(c) for c in out]


def build_dag(n_nodes, edges):
    """Validate an edge set and return a Dag with a deterministic topo order.

    Kahn's algorithm with smallest-index-first tie breaking, so the order is
    reproducible. Raises CycleError on any directed cycle (self-loops
    included) and IndexError when an edge references a node outside
    [0, n_nodes).
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be positive")
    edge_set = set()
    for k, j in edges:
        k, j = int(k), int(j)
        if not (0 <= k < n_nodes and 0 <= j < n_nodes):
            raise IndexError(f"edge ({k}, {j}) references a node outside [0, {n_nodes})")
        if k == j:
            raise CycleError(f"self-loop at node {k}")
        edge_set.add((k, j))

    indeg = [0] * n_nodes
    children = [[] for _ in range(n_nodes)]
    for k, j in edge_set:
        indeg[j] += 1
        children[k].append(j)
    ready = [j for j in range(n_nodes) if indeg[j] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        k = heapq.heappop(ready)
        order.append(k)
        for j in children[k]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, j)
    if len(order) != n_nodes:
        raise CycleError("edge set contains a directed cycle")
    return Dag(n_nodes=n_nodes, edges=frozenset(edge_set), topo_order=tuple(order))


def parents(dag, j):
    """Sorted list of direct causes of node j."""
    if not 0 <= j < dag.n_nodes:
        raise IndexError(f"node {j} outside [0, {dag.n_nodes})")
    return sorted(k for k, jj in dag.edges if jj == j)


@dataclass(frozen=True)
class GraphVariant:
    """Which graph the score model conditions on.

    kind is one of "true-dag", "empty", "complete", "pooled". For "complete",
    order gives the causal order used; None means the DAG's own topo order.
    "pooled" leaves the graph unchanged (the pooling happens to the
    intervention targets, not the graph).
    """

    kind: str = "true-dag"
    order: tuple | None = None

    VALID = ("true-dag", "empty", "complete", "pooled")

    def __post_init__(self):
        if self.kind not in self.VALID:
            raise ValueError(f"unknown graph variant {self.kind!r}")


def apply_variant(dag, variant):
    """Return the DAG the score module should condition on."""
    if variant.kind in ("true-dag", "pooled"):
        return dag
    if variant.kind == "empty":
        return build_dag(dag.n_nodes, [])
    # complete graph w.r.t. a causal order consistent with dag
    order = variant.order if variant.order is not None else dag.topo_order
    if sorted(order) != list(range(dag.n_nodes)):
        raise ValueError("order must be a permutation of the node set")
    pos = {node: i for i, node in enumerate(order)}
    for k, j in dag.edges:
        if pos[k] >= pos[j]:
            raise ValueError("order is not a topological order of the DAG")
    edges = [(order[i], order[j]) for i in range(dag.n_nodes) for j in range(i + 1, dag.n_nodes)]
    return build_dag(dag.n_nodes, edges)
