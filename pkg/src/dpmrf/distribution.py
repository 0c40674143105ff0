"""Quantities of a log-linear model that need inference: log Z, marginals, KL, samples."""
from __future__ import annotations

import warnings

import numpy as np

from .inference import BPResult, ConvergenceWarning, Engine, sum_product_exact
from .junction_tree import JunctionTree
from .model import CliqueTableSet, Dataset, StructureError, margin


def log_partition(theta: np.ndarray, jt: JunctionTree) -> float:
    return sum_product_exact(theta, jt).log_partition


def model_marginals(theta: np.ndarray, engine: Engine) -> CliqueTableSet:
    res = engine.run(theta)
    if not res.exact and not res.converged:
        warnings.warn(
            f"approximate marginals did not converge (residual {res.residual:.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return res.marginals


def kl_divergence(theta_true: np.ndarray, theta_hat: np.ndarray, jt: JunctionTree) -> float:
    """D(p_true || p_hat) per record, from exact clique marginals of p_true."""
    if not isinstance(jt, JunctionTree):
        raise StructureError("KL divergence needs an exact junction tree")
    p = sum_product_exact(theta_true, jt)
    a_hat = log_partition(theta_hat, jt)
    diff = np.asarray(theta_true, dtype=float) - np.asarray(theta_hat, dtype=float)
    kl = float(diff @ p.marginals.values) - p.log_partition + a_hat
    # rounding can leave a tiny negative value for identical models
    return max(kl, 0.0)


def sample(theta: np.ndarray, N: int, jt: JunctionTree, rng: np.random.Generator) -> Dataset:
    """N exact i.i.d. draws by ancestral sampling down the calibrated tree."""
    res = sum_product_exact(theta, jt)
    beliefs = res.tree_beliefs
    nodes = jt.tree_cliques
    cards = jt.structure.domain.cardinalities
    order, parent = jt.order
    out = np.full((N, len(cards)), -1, dtype=np.int64)
    root = order[0]
    flat = rng.choice(beliefs[root].size, size=N, p=_safe_p(beliefs[root].ravel()))
    out[:, list(nodes[root])] = np.column_stack(np.unravel_index(flat, beliefs[root].shape))
    for u in order[1:]:
        sep = jt.separator(u, parent[u])
        node = nodes[u]
        rest = [v for v in node if v not in sep]
        if not rest:
            continue
        # reorder the belief to (separator vars..., remaining vars...) and condition
        perm = [node.index(v) for v in sep] + [node.index(v) for v in rest]
        b = np.transpose(beliefs[u], perm)
        sep_shape = tuple(cards[v] for v in sep)
        rest_shape = tuple(cards[v] for v in rest)
        cond = b.reshape(int(np.prod(sep_shape, dtype=np.int64)), -1)
        if sep:
            keys = np.ravel_multi_index(tuple(out[:, v] for v in sep), sep_shape)
        else:
            keys = np.zeros(N, dtype=np.int64)
        draws = np.empty(N, dtype=np.int64)
        for key in np.unique(keys):
            rows = np.nonzero(keys == key)[0]
            draws[rows] = rng.choice(cond.shape[1], size=rows.size, p=_safe_p(cond[key]))
        out[:, rest] = np.column_stack(np.unravel_index(draws, rest_shape))
    return Dataset(out)


def sample_counts(
    theta: np.ndarray, N: int, jt: JunctionTree, rng: np.random.Generator, calibrated: BPResult | None = None
) -> CliqueTableSet:
    """Clique tables of N i.i.d. records, drawn without materializing the records.

    Root-node counts are multinomial; each child node splits every separator
    count multinomially by the conditional belief. The result has the same
    distribution as ``sufficient_statistics(sample(...))``. Pass ``calibrated``
    (the exact result for theta) to skip recalibration in tight loops.
    """
    s = jt.structure
    res = calibrated if calibrated is not None else sum_product_exact(theta, jt)
    beliefs = res.tree_beliefs
    nodes = jt.tree_cliques
    cards = s.domain.cardinalities
    order, parent = jt.order
    counts = [None] * len(nodes)
    root = order[0]
    counts[root] = rng.multinomial(int(N), _safe_p(beliefs[root].ravel())).reshape(beliefs[root].shape)
    for u in order[1:]:
        p = parent[u]
        sep = jt.separator(u, p)
        node = nodes[u]
        rest = [v for v in node if v not in sep]
        sep_counts = margin(counts[p], nodes[p], sep).ravel() if sep else np.array([counts[p].sum()])
        perm = [node.index(v) for v in sep] + [node.index(v) for v in rest]
        b = np.transpose(beliefs[u], perm).reshape(sep_counts.size, -1)
        cond = b / np.maximum(b.sum(axis=1, keepdims=True), 1e-300)
        # rows with zero probability mass never receive counts; give them a valid pmf
        cond[b.sum(axis=1) <= 0] = 1.0 / cond.shape[1]
        cond = np.clip(cond, 0.0, None)
        cond /= cond.sum(axis=1, keepdims=True)
        drawn = rng.multinomial(sep_counts.astype(np.int64), cond)
        shape = tuple(cards[v] for v in sep) + tuple(cards[v] for v in rest)
        inv = np.argsort(perm)
        counts[u] = np.transpose(drawn.reshape(shape), inv)
    out = np.empty(s.dim)
    for k, c in enumerate(s.cliques):
        u = jt.assignment[k]
        out[s.block(k)] = margin(counts[u], nodes[u], c).ravel()
    return CliqueTableSet(s, out, "counts")


def _safe_p(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 0.0, None)
    return p / p.sum()
