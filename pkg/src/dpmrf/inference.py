"""Sum-product engines and the junction-tree entropy of clique tables.

All message passing is done in the log domain.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .junction_tree import JunctionTree
from .model import CliqueTableSet, ModelStructure, StructureError, margin

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BPConfig:
    damping: float = 1.0
    tol: float = 1e-10
    max_iters: int = 1000

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.tol <= 0 or self.max_iters < 1:
            raise ValueError("tol must be positive and max_iters >= 1")


@dataclass
class BPResult:
    marginals: CliqueTableSet
    log_partition: float
    converged: bool = True
    residual: float = 0.0
    iterations: int = 1
    exact: bool = True
    tree_beliefs: list[np.ndarray] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "log_partition": self.log_partition,
            "exact": self.exact,
            "converged": self.converged,
            "residual": self.residual,
            "iterations": self.iterations,
            "marginals": self.marginals.values.tolist(),
        }


def _expand(table: np.ndarray, vars_: Sequence[int], target: Sequence[int]) -> np.ndarray:
    """Reshape a table over sorted ``vars_`` to broadcast against sorted ``target``."""
    pos = {v: i for i, v in enumerate(vars_)}
    shape = [table.shape[pos[v]] if v in pos else 1 for v in target]
    return table.reshape(shape)


def _node_potentials(theta: np.ndarray, jt: JunctionTree) -> list[np.ndarray]:
    s = jt.structure
    cards = s.domain.cardinalities
    pots = [np.zeros(tuple(cards[v] for v in node)) for node in jt.tree_cliques]
    for k, table in enumerate(s.split(np.asarray(theta, dtype=float))):
        u = jt.assignment[k]
        pots[u] = pots[u] + _expand(table, s.cliques[k], jt.tree_cliques[u])
    return pots


def _sum_out(logtable: np.ndarray, vars_: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    axes = tuple(i for i, v in enumerate(vars_) if v not in set(keep))
    return logsumexp(logtable, axis=axes) if axes else logtable


def sum_product_exact(theta: np.ndarray, jt: JunctionTree) -> BPResult:
    """Two-pass calibration on the junction tree; exact marginals and log Z."""
    s = jt.structure
    if np.asarray(theta).shape != (s.dim,):
        raise StructureError("theta does not match the junction tree's structure")
    nodes = jt.tree_cliques
    order, parent = jt.order
    pots = _node_potentials(theta, jt)
    up = [None] * len(nodes)  # message node -> parent, over the separator
    acc = [p.copy() for p in pots]
    for u in reversed(order):
        p = parent[u]
        if p < 0:
            continue
        sep = jt.separator(u, p)
        up[u] = _sum_out(acc[u], nodes[u], sep)
        acc[p] = acc[p] + _expand(up[u], sep, nodes[p])
    root = order[0]
    log_z = float(logsumexp(acc[root]))
    beliefs = [None] * len(nodes)
    beliefs[root] = acc[root]
    for u in order[1:]:
        p = parent[u]
        sep = jt.separator(u, p)
        down = _sum_out(beliefs[p], nodes[p], sep) - up[u]
        beliefs[u] = acc[u] + _expand(down, sep, nodes[u])
    probs = [np.exp(b - logsumexp(b)) for b in beliefs]
    out = np.empty(s.dim)
    for k, c in enumerate(s.cliques):
        u = jt.assignment[k]
        out[s.block(k)] = margin(probs[u], nodes[u], c).ravel()
    return BPResult(CliqueTableSet(s, out, "marginal"), log_z, tree_beliefs=probs)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def _log_normalize(m: np.ndarray) -> np.ndarray:
    return m - logsumexp(m)


def _bethe(theta_tables, factor_beliefs, var_beliefs, degrees) -> float:
    val = 0.0
    for t, b in zip(theta_tables, factor_beliefs):
        val += float((t * b).sum()) + _entropy(b)
    for b, d in zip(var_beliefs, degrees):
        val += (1 - d) * _entropy(b)
    return val


def _loopy_generic(theta: np.ndarray, structure: ModelStructure, cfg: BPConfig):
    cards = structure.domain.cardinalities
    cliques = structure.cliques
    tables = structure.split(np.asarray(theta, dtype=float))
    T = structure.domain.num_vars
    msgs = [[np.full(cards[v], -np.log(cards[v])) for v in c] for c in cliques]
    members = [[] for _ in range(T)]
    for f, c in enumerate(cliques):
        for pos, v in enumerate(c):
            members[v].append((f, pos))

    def var_totals():
        tot = [np.zeros(cards[v]) for v in range(T)]
        for f, c in enumerate(cliques):
            for pos, v in enumerate(c):
                tot[v] = tot[v] + msgs[f][pos]
        return tot

    residual = np.inf
    it = 0
    converged = False
    for it in range(1, cfg.max_iters + 1):
        tot = var_totals()
        new = []
        for f, c in enumerate(cliques):
            cav = [tot[v] - msgs[f][pos] for pos, v in enumerate(c)]
            row = []
            for pos, v in enumerate(c):
                acc = tables[f].copy()
                for q, u in enumerate(c):
                    if q != pos:
                        acc = acc + _expand(cav[q], (u,), c)
                m = _sum_out(acc, c, (v,))
                row.append(_log_normalize(m))
            new.append(row)
        residual = 0.0
        for f in range(len(cliques)):
            for pos in range(len(cliques[f])):
                upd = _log_normalize((1 - cfg.damping) * msgs[f][pos] + cfg.damping * new[f][pos])
                residual = max(residual, float(np.abs(upd - msgs[f][pos]).max()))
                msgs[f][pos] = upd
        if residual <= cfg.tol:
            converged = True
            break
    tot = var_totals()
    factor_beliefs = []
    for f, c in enumerate(cliques):
        acc = tables[f].copy()
        for pos, v in enumerate(c):
            acc = acc + _expand(tot[v] - msgs[f][pos], (v,), c)
        factor_beliefs.append(np.exp(_log_normalize(acc)))
    var_beliefs = [np.exp(_log_normalize(t)) for t in tot]
    degrees = [len(m) for m in members]
    return factor_beliefs, var_beliefs, degrees, converged, residual, it


def _loopy_pairwise(theta: np.ndarray, structure: ModelStructure, cfg: BPConfig):
    """Pairwise fast path: unary cliques fold into node biases, edges run in the kernel."""
    cards = np.asarray(structure.domain.cardinalities, dtype=np.int64)
    T = len(cards)
    tables = structure.split(np.asarray(theta, dtype=float))
    var_off = np.concatenate([[0], np.cumsum(cards)]).astype(np.int64)
    unary = np.zeros(var_off[-1])
    edge_ids = [k for k, c in enumerate(structure.cliques) if len(c) == 2]
    for k, c in enumerate(structure.cliques):
        if len(c) == 1:
            unary[var_off[c[0]]:var_off[c[0] + 1]] += tables[k]
    edges = np.array([structure.cliques[k] for k in edge_ids], dtype=np.int64).reshape(-1, 2)
    edge_theta = np.concatenate([tables[k].ravel() for k in edge_ids]) if edge_ids else np.zeros(0)
    edge_off = np.concatenate([[0], np.cumsum([tables[k].size for k in edge_ids])]).astype(np.int64)
    msg_off = np.concatenate(
        [[0], np.cumsum([cards[i] + cards[j] for i, j in edges])]
    ).astype(np.int64)
    msg = np.empty(msg_off[-1])
    for e, (i, j) in enumerate(edges):
        msg[msg_off[e]:msg_off[e] + cards[i]] = -np.log(cards[i])
        msg[msg_off[e] + cards[i]:msg_off[e + 1]] = -np.log(cards[j])
    iters, residual = kernels.lbp_pairwise(
        cards, var_off, unary, edges, edge_off, edge_theta, msg_off, msg,
        float(cfg.damping), float(cfg.tol), int(cfg.max_iters),
    )
    tot = unary.copy()
    for e, (i, j) in enumerate(edges):
        tot[var_off[i]:var_off[i + 1]] += msg[msg_off[e]:msg_off[e] + cards[i]]
        tot[var_off[j]:var_off[j + 1]] += msg[msg_off[e] + cards[i]:msg_off[e + 1]]
    var_beliefs = [np.exp(_log_normalize(tot[var_off[v]:var_off[v + 1]])) for v in range(T)]
    factor_beliefs = []
    e_of = {k: e for e, k in enumerate(edge_ids)}
    for k, c in enumerate(structure.cliques):
        if len(c) == 1:
            factor_beliefs.append(var_beliefs[c[0]])
            continue
        e = e_of[k]
        i, j = c
        cav_i = tot[var_off[i]:var_off[i + 1]] - msg[msg_off[e]:msg_off[e] + cards[i]]
        cav_j = tot[var_off[j]:var_off[j + 1]] - msg[msg_off[e] + cards[i]:msg_off[e + 1]]
        acc = tables[k] + cav_i[:, None] + cav_j[None, :]
        factor_beliefs.append(np.exp(_log_normalize(acc)))
    # unary cliques are folded into the node, so only edges count toward the degree
    degrees = [0] * T
    for i, j in edges:
        degrees[i] += 1
        degrees[j] += 1
    theta_for_bethe = [t for k, t in enumerate(tables) if len(structure.cliques[k]) == 2]
    edge_beliefs = [factor_beliefs[k] for k in edge_ids]
    unary_tables = [unary[var_off[v]:var_off[v + 1]] for v in range(T)]
    bethe = _bethe(theta_for_bethe, edge_beliefs, var_beliefs, degrees)
    bethe += sum(float((u * b).sum()) for u, b in zip(unary_tables, var_beliefs))
    converged = residual <= cfg.tol
    return factor_beliefs, bethe, converged, residual, iters


def loopy_bp(theta: np.ndarray, structure: ModelStructure, cfg: BPConfig = BPConfig()) -> BPResult:
    """Damped synchronous sum-product on the clique factor graph.

    ``log_partition`` of the result is the Bethe approximation (negative Bethe
    free energy); it is exact on trees.
    """
    theta = np.asarray(theta, dtype=float)
    if structure.is_pairwise():
        fb, bethe, converged, residual, iters = _loopy_pairwise(theta, structure, cfg)
    else:
        fb, vb, deg, converged, residual, iters = _loopy_generic(theta, structure, cfg)
        bethe = _bethe(structure.split(theta), fb, vb, deg)
    if not converged:
        warnings.warn(
            f"loopy BP stopped after {iters} iterations with residual {residual:.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    vals = np.concatenate([b.ravel() for b in fb])
    return BPResult(
        CliqueTableSet(structure, vals, "marginal"),
        float(bethe),
        converged=bool(converged),
        residual=float(residual),
        iterations=int(iters),
        exact=False,
    )


class Engine(Protocol):
    structure: ModelStructure
    exact: bool

    def run(self, theta: np.ndarray) -> BPResult: ...


@dataclass(frozen=True)
class ExactEngine:
    jt: JunctionTree
    exact: bool = True

    @property
    def structure(self) -> ModelStructure:
        return self.jt.structure

    def run(self, theta: np.ndarray) -> BPResult:
        return sum_product_exact(theta, self.jt)


@dataclass(frozen=True)
class LoopyEngine:
    structure: ModelStructure
    cfg: BPConfig = BPConfig(damping=0.5, tol=1e-8, max_iters=500)
    exact: bool = False

    def run(self, theta: np.ndarray) -> BPResult:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            res = loopy_bp(theta, self.structure, self.cfg)
        if not res.converged:
            log.debug("loopy BP residual %.3g after %d iterations", res.residual, res.iterations)
        return res


def make_engine(structure: ModelStructure, jt: JunctionTree | None = None, cfg: BPConfig | None = None):
    """Exact engine when a junction tree is given or can be built, loopy otherwise."""
    from .junction_tree import build_junction_tree

    if jt is None:
        jt = build_junction_tree(structure)
    if jt is not None:
        return ExactEngine(jt)
    return LoopyEngine(structure, cfg) if cfg is not None else LoopyEngine(structure)


def cgm_entropy(n: CliqueTableSet, jt: JunctionTree) -> float:
    """N * (sum of clique entropies - weighted separator entropies) of n / N.

    Every tree node must be one of the model's cliques so that its table is
    available; 0 log 0 is taken as 0.
    """
    s = n.structure
    if s is not jt.structure and s != jt.structure:
        raise StructureError("tables and junction tree use different structures")
    index = {c: k for k, c in enumerate(s.cliques)}
    missing = [node for node in jt.tree_cliques if node not in index]
    if missing:
        raise StructureError(f"tree nodes {missing} have no clique table")
    tables = [n.table(index[node]) for node in jt.tree_cliques]
    N = float(tables[0].sum())
    if N <= 0:
        return 0.0
    h = sum(_entropy(t.ravel() / N) for t in tables)
    for sep, mult in jt.separators:
        if not sep:
            continue
        u = next(i for i, node in enumerate(jt.tree_cliques) if set(sep) <= set(node))
        h -= mult * _entropy(margin(tables[u], jt.tree_cliques[u], sep).ravel() / N)
    return N * h
