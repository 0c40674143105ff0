"""Junction trees over model cliques.

A junction tree here is a tree whose nodes are variable sets covering every
model clique, with the running-intersection property. Each model clique is
assigned to one containing node; its log-potentials are added there.
"""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import networkx as nx

from .model import ModelStructure, StructureError


@dataclass(frozen=True)
class JunctionTree:
    structure: ModelStructure
    tree_cliques: tuple[tuple[int, ...], ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        nodes = tuple(tuple(sorted(set(int(v) for v in c))) for c in self.tree_cliques)
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "tree_cliques", nodes)
        object.__setattr__(self, "edges", edges)
        _validate(self)

    @cached_property
    def assignment(self) -> tuple[int, ...]:
        """For each model clique, the index of the smallest tree node containing it."""
        out = []
        for c in self.structure.cliques:
            hosts = [u for u, node in enumerate(self.tree_cliques) if set(c) <= set(node)]
            out.append(min(hosts, key=lambda u: (len(self.tree_cliques[u]), u)))
        return tuple(out)

    @cached_property
    def separators(self) -> tuple[tuple[tuple[int, ...], int], ...]:
        """Distinct separator sets with their multiplicities."""
        counts = Counter(self.separator(a, b) for a, b in self.edges)
        return tuple(sorted(counts.items()))

    def separator(self, a: int, b: int) -> tuple[int, ...]:
        return tuple(sorted(set(self.tree_cliques[a]) & set(self.tree_cliques[b])))

    @cached_property
    def order(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """(BFS order from node 0, parent of each node; -1 for the root)."""
        adj = self.adjacency
        parent = [-1] * len(self.tree_cliques)
        seen = {0}
        order = []
        queue = deque([0])
        while queue:
            u = queue.popleft()
            order.append(u)
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    parent[w] = u
                    queue.append(w)
        return tuple(order), tuple(parent)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        adj = [[] for _ in self.tree_cliques]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return tuple(tuple(sorted(x)) for x in adj)

    def nodes_are_cliques(self) -> bool:
        """True when every tree node is itself a model clique."""
        cl = set(self.structure.cliques)
        return all(node in cl for node in self.tree_cliques)


def _validate(jt: JunctionTree) -> None:
    s = jt.structure
    T = s.domain.num_vars
    nodes = jt.tree_cliques
    if not nodes:
        raise StructureError("junction tree has no nodes")
    covered = set()
    for node in nodes:
        if not node or node[0] < 0 or node[-1] >= T:
            raise StructureError(f"tree clique {node} out of range")
        covered.update(node)
    if covered != set(range(T)):
        raise StructureError("junction tree does not cover every variable")
    for c in s.cliques:
        if not any(set(c) <= set(node) for node in nodes):
            raise StructureError(f"model clique {c} is not contained in any tree clique")
    g = nx.Graph()
    g.add_nodes_from(range(len(nodes)))
    for a, b in jt.edges:
        if not (0 <= a < len(nodes) and 0 <= b < len(nodes)) or a == b:
            raise StructureError(f"bad tree edge {(a, b)}")
        g.add_edge(a, b)
    if g.number_of_edges() != len(nodes) - 1 or not nx.is_tree(g):
        raise StructureError("junction tree edges do not form a spanning tree")
    for v in range(T):
        holding = [u for u, node in enumerate(nodes) if v in node]
        if not nx.is_connected(g.subgraph(holding)):
            raise StructureError(f"running intersection fails for variable {v}")


def independence_graph(structure: ModelStructure) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(range(structure.domain.num_vars))
    g.add_edges_from(structure.edges())
    return g


def junction_tree_from_cliques(
    structure: ModelStructure, tree_cliques: Sequence[Sequence[int]]
) -> JunctionTree:
    """Connect the given cover cliques by a maximum-weight spanning tree.

    Raises StructureError if no valid junction tree exists over these cliques.
    """
    nodes = sorted({tuple(sorted(set(c))) for c in tree_cliques}, key=lambda c: (c[0], c))
    g = nx.Graph()
    g.add_nodes_from(range(len(nodes)))
    for a in range(len(nodes)):
        for b in range(a + 1, len(nodes)):
            # small tie-break keeps the tree deterministic and prefers chain-like layouts
            w = len(set(nodes[a]) & set(nodes[b])) - 1e-6 * (b - a)
            g.add_edge(a, b, weight=w)
    tree = nx.maximum_spanning_tree(g, algorithm="kruskal")
    edges = tuple(sorted(tuple(sorted(e)) for e in tree.edges()))
    return JunctionTree(structure, tuple(nodes), edges)


def build_junction_tree(structure: ModelStructure) -> JunctionTree | None:
    """Junction tree over the maximal cliques of the independence graph.

    Returns None when the graph is not chordal; no triangulation is attempted.
    """
    g = independence_graph(structure)
    if not nx.is_chordal(g):
        return None
    cliques = [tuple(sorted(c)) for c in nx.chordal_graph_cliques(g)]
    return junction_tree_from_cliques(structure, cliques)


def triangulated_junction_tree(structure: ModelStructure) -> JunctionTree:
    """Explicit opt-in: junction tree of a chordal completion of the graph."""
    g = independence_graph(structure)
    chordal, _ = nx.complete_to_chordal_graph(g)
    cliques = [tuple(sorted(c)) for c in nx.chordal_graph_cliques(chordal)]
    return junction_tree_from_cliques(structure, cliques)
