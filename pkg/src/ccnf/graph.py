"""Causal graphs: validation, topological batching and block expansion.

Labels are 0-based integers; ``names`` maps each label to a variable name.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BlockEdgeViolation,
    CycleDetected,
    DanglingParentLabel,
    DuplicateName,
    GraphError,
)

GRAPH_KEYS = {"names", "edges", "blocks"}


@dataclass(frozen=True)
class CausalGraph:
    names: tuple
    parents: tuple
    blocks: tuple | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(
            self, "parents", tuple(tuple(sorted(int(p) for p in pa)) for pa in self.parents)
        )
        if self.blocks is not None:
            blocks = tuple(tuple(sorted(int(v) for v in b)) for b in self.blocks)
            object.__setattr__(self, "blocks", blocks or None)
        if len(self.parents) != len(self.names):
            raise GraphError(
                f"{len(self.names)} names but {len(self.parents)} parent lists"
            )

    @classmethod
    def from_edges(cls, names, edges, blocks=None) -> "CausalGraph":
        """Build a graph from ``(from, to)`` pairs given as labels or names."""
        names = list(names)
        index = {str(n): i for i, n in enumerate(names)}
        parents = [set() for _ in names]
        for a, b in edges:
            a, b = _resolve(a, index, len(names)), _resolve(b, index, len(names))
            parents[b].add(a)
        if blocks is not None:
            blocks = [[_resolve(v, index, len(names)) for v in blk] for blk in blocks]
        return cls(names, parents, blocks)

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def edges(self) -> list:
        return [(p, i) for i, pa in enumerate(self.parents) for p in pa]

    def index(self, name) -> int:
        """Label of a node given its name (or a label already)."""
        return _resolve(name, {n: i for i, n in enumerate(self.names)}, self.d)

    def children(self) -> list:
        ch = [[] for _ in range(self.d)]
        for i, pa in enumerate(self.parents):
            for p in pa:
                ch[p].append(i)
        return ch

    def adjacency(self) -> np.ndarray:
        """``G[i, j] = 1`` iff ``j`` is a parent of ``i``."""
        G = np.zeros((self.d, self.d))
        for i, pa in enumerate(self.parents):
            G[i, list(pa)] = 1.0
        return G

    def to_document(self) -> dict:
        doc = {"names": list(self.names), "edges": [list(e) for e in self.edges]}
        if self.blocks:
            doc["blocks"] = [list(b) for b in self.blocks]
        return doc


def _resolve(v, index, d):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        v = int(v)
        if not 0 <= v < d:
            raise DanglingParentLabel(f"label {v} out of range for {d} nodes")
        return v
    if str(v) not in index:
        raise DanglingParentLabel(f"unknown node {v!r}")
    return index[str(v)]


def validate_dag(graph: CausalGraph) -> CausalGraph:
    """Check names, labels, blocks and acyclicity; return the graph unchanged."""
    seen = set()
    for n in graph.names:
        if n in seen:
            raise DuplicateName(f"duplicate variable name {n!r}")
        seen.add(n)
    for i, pa in enumerate(graph.parents):
        for p in pa:
            if not 0 <= p < graph.d:
                raise DanglingParentLabel(f"node {i} has parent label {p} out of range")
    cycle = _find_cycle(graph)
    if cycle is not None:
        raise CycleDetected(cycle)
    if graph.blocks:
        members = [v for b in graph.blocks for v in b]
        if sorted(members) != list(range(graph.d)):
            raise GraphError("blocks must partition all node labels")
        owner = {v: k for k, b in enumerate(graph.blocks) for v in b}
        for p, i in graph.edges:
            if owner[p] == owner[i]:
                raise BlockEdgeViolation(f"edge {p}->{i} lies inside block {owner[i]}")
    return graph


def _find_cycle(graph):
    # iterative three-colour DFS over child edges
    WHITE, GREY, BLACK = 0, 1, 2
    children = graph.children()
    colour = [WHITE] * graph.d
    for root in range(graph.d):
        if colour[root] != WHITE:
            continue
        stack = [(root, iter(children[root]))]
        path = [root]
        colour[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = BLACK
                stack.pop()
                path.pop()
            elif colour[nxt] == GREY:
                return path[path.index(nxt):]
            elif colour[nxt] == WHITE:
                colour[nxt] = GREY
                stack.append((nxt, iter(children[nxt])))
                path.append(nxt)
    return None


def topological_batching(graph: CausalGraph) -> tuple:
    """Partition labels into batches whose parents all lie in earlier batches.

    Each batch holds the nodes left without a predecessor once all earlier
    batches are removed; members are listed in ascending label order.
    """
    validate_dag(graph)
    indegree = [len(pa) for pa in graph.parents]
    children = graph.children()
    current = [i for i in range(graph.d) if indegree[i] == 0]
    batches = []
    while current:
        batches.append(tuple(current))
        nxt = []
        for v in current:
            for c in children[v]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    nxt.append(c)
        current = sorted(nxt)
    return tuple(batches)


def ancestors(graph: CausalGraph, i: int) -> set:
    if not 0 <= i < graph.d:
        raise GraphError(f"label {i} out of range")
    out, stack = set(), list(graph.parents[i])
    while stack:
        p = stack.pop()
        if p not in out:
            out.add(p)
            stack.extend(graph.parents[p])
    return out


def descendants(graph: CausalGraph, i: int) -> set:
    if not 0 <= i < graph.d:
        raise GraphError(f"label {i} out of range")
    children = graph.children()
    out, stack = set(), list(children[i])
    while stack:
        c = stack.pop()
        if c not in out:
            out.add(c)
            stack.extend(children[c])
    return out


def min_depth(graph: CausalGraph) -> int:
    """Node count of the longest directed path (= number of batches)."""
    return len(topological_batching(graph))


def expand_blocks(graph: CausalGraph) -> CausalGraph:
    """Replace blocks by dense ascending-label chains.

    Every block member gets as parents all earlier members of its block plus
    every external parent of the block.
    """
    validate_dag(graph)
    if not graph.blocks:
        return graph
    parents = [set(pa) for pa in graph.parents]
    for block in graph.blocks:
        external = set().union(*(graph.parents[v] for v in block)) - set(block)
        for k, v in enumerate(block):
            parents[v] = external | set(block[:k])
    return validate_dag(CausalGraph(graph.names, parents, None))


def parse_graph_document(doc: dict) -> CausalGraph:
    unknown = set(doc) - GRAPH_KEYS
    if unknown:
        raise GraphError(f"unknown graph keys: {sorted(unknown)}")
    if "names" not in doc:
        raise GraphError("graph document needs 'names'")
    graph = CausalGraph.from_edges(doc["names"], doc.get("edges", []), doc.get("blocks"))
    return validate_dag(graph)


def load_graph(path) -> CausalGraph:
    with open(Path(path), encoding="utf-8") as fh:
        return parse_graph_document(json.load(fh))


def save_graph(graph: CausalGraph, path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(graph.to_document(), fh, indent=2)
        fh.write("\n")
