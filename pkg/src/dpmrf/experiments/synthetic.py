"""Synthetic structures, potentials and seed derivation for trial grids."""
from __future__ import annotations

import numpy as np
import networkx as nx

from ..model import DomainSpec, ModelStructure

ESTIMATOR_CODES = {
    "population": 0,
    "noise": 1,
    "naive": 2,
    "naive-projected": 3,
    "cgm": 4,
    "nonprivate": 5,
    "random": 6,
    "model": 7,
    "split": 8,
}


def child_seed(master_seed: int, *keys: int | str) -> int:
    """Deterministic 63-bit seed for a trial component, keyed on integer or named ids."""
    ints = [ESTIMATOR_CODES[k] if isinstance(k, str) else int(k) for k in keys]
    ss = np.random.SeedSequence([int(master_seed), *ints])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def chain_edges(T: int, order: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(T) for j in range(i + 1, T) if j - i <= order]


def gen_structure(kind: str, T: int, card: int, rng: np.random.Generator | None = None,
                  order: int = 3, edge_prob: float = 0.3) -> ModelStructure:
    """Pairwise structure: ``chain`` of the given order, or a connected ER graph.

    ``time-homogeneous-chain`` adds a node clique on the first variable to a
    first-order chain.
    """
    domain = DomainSpec.uniform(T, card)
    if kind == "chain":
        return ModelStructure.pairwise(domain, chain_edges(T, order))
    if kind == "time-homogeneous-chain":
        cliques = [(0,)] + [(t, t + 1) for t in range(T - 1)]
        return ModelStructure(domain, tuple(cliques))
    if kind == "er":
        if rng is None:
            raise ValueError("ER graphs need an rng")
        while True:
            upper = np.triu(rng.random((T, T)) < edge_prob, k=1)
            edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(upper))]
            g = nx.Graph()
            g.add_nodes_from(range(T))
            g.add_edges_from(edges)
            if nx.is_connected(g):
                return ModelStructure.pairwise(domain, edges)
    raise ValueError(f"unknown structure kind {kind!r}")


def gen_potentials(structure: ModelStructure, rng: np.random.Generator) -> np.ndarray:
    """Log of one Dirichlet(1, ..., 1) draw per clique table."""
    blocks = [np.log(rng.dirichlet(np.ones(size))) for size in structure.sizes]
    return np.concatenate(blocks)


def random_marginals(structure: ModelStructure, rng: np.random.Generator) -> np.ndarray:
    """Independent uniform-on-simplex table per clique (the random reference estimator)."""
    return np.concatenate([rng.dirichlet(np.ones(size)) for size in structure.sizes])


def tying_homogeneous_chain(structure: ModelStructure) -> np.ndarray:
    """Tie all edge tables of a time-homogeneous chain; the node table stays free."""
    cards = structure.domain.cardinalities
    node = structure.sizes[0]
    edge = cards[0] * cards[1]
    idx = [np.arange(node)]
    for k in range(1, structure.num_cliques):
        if structure.sizes[k] != edge:
            raise ValueError("tying needs equal edge tables")
        idx.append(node + np.arange(edge))
    return np.concatenate(idx)
