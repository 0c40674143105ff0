import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_decomposable
from dpmrf.experiments.synthetic import chain_edges, gen_structure
from dpmrf.junction_tree import (
    JunctionTree,
    build_junction_tree,
    junction_tree_from_cliques,
    triangulated_junction_tree,
)
from dpmrf.model import DomainSpec, ModelStructure, StructureError


def test_first_order_chain():
    s = ModelStructure.pairwise(DomainSpec.uniform(4, 2), [(0, 1), (1, 2), (2, 3)])
    jt = build_junction_tree(s)
    assert jt.tree_cliques == ((0, 1), (1, 2), (2, 3))
    assert sorted(jt.separators) == [((1,), 1), ((2,), 1)]


def test_third_order_chain():
    s = gen_structure("chain", 5, 2, order=3)
    jt = build_junction_tree(s)
    assert jt.tree_cliques == ((0, 1, 2, 3), (1, 2, 3, 4))
    assert jt.separators == (((1, 2, 3), 1),)


def test_cycle_is_not_decomposable():
    s = ModelStructure.pairwise(DomainSpec.uniform(4, 2), [(0, 1), (1, 2), (2, 3), (0, 3)])
    assert build_junction_tree(s) is None
    jt = triangulated_junction_tree(s)
    assert all(len(c) == 3 for c in jt.tree_cliques)


def test_invalid_trees_are_rejected():
    s = ModelStructure.pairwise(DomainSpec.uniform(3, 2), [(0, 1), (1, 2)])
    with pytest.raises(StructureError):
        JunctionTree(s, ((0, 1),), ())  # does not cover (1, 2)
    # (0,1)-(2,3)-(1,2): variable 1 appears in two nodes that are not connected through (1,2)
    s4 = ModelStructure.pairwise(DomainSpec.uniform(4, 2), [(0, 1), (1, 2), (2, 3)])
    with pytest.raises(StructureError):
        JunctionTree(s4, ((0, 1), (1, 2), (2, 3)), ((0, 2), (1, 2)))
    with pytest.raises(StructureError):
        junction_tree_from_cliques(s4, [(0, 1), (2, 3)])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_decomposable_trees_are_valid(seed):
    s = random_decomposable(np.random.default_rng(seed))
    jt = build_junction_tree(s)
    assert jt is not None
    assert sum(m for _, m in jt.separators) == len(jt.tree_cliques) - 1
    # running intersection: nodes holding a variable form a connected subtree
    g = nx.Graph(list(jt.edges))
    g.add_nodes_from(range(len(jt.tree_cliques)))
    for v in range(s.domain.num_vars):
        holders = [i for i, c in enumerate(jt.tree_cliques) if v in c]
        assert nx.is_connected(g.subgraph(holders))
    for k, c in enumerate(s.cliques):
        assert set(c) <= set(jt.tree_cliques[jt.assignment[k]])


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 9), st.integers(0, 2**31 - 1))
def test_triangulation_covers_er_graphs(T, seed):
    s = gen_structure("er", T, 2, np.random.default_rng(seed), edge_prob=0.5)
    jt = triangulated_junction_tree(s)
    assert sum(m for _, m in jt.separators) == len(jt.tree_cliques) - 1


def test_chain_edge_counts():
    assert len(chain_edges(4, 1)) == 3
    assert len(chain_edges(10, 3)) == 24
