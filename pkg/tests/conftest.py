"""Shared oracles: brute-force enumeration, random decomposable models, a conic MAP solver."""
import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from dpmrf.model import DomainSpec, ModelStructure, clique_scores

# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def enumerate_model(theta, structure):
    """log Z and clique marginals by summing over every joint state."""
    cards = structure.domain.cardinalities
    states = np.array(list(itertools.product(*[range(c) for c in cards])), dtype=np.int64)
    scores = clique_scores(states, theta, structure)
    log_z = float(logsumexp(scores))
    p = np.exp(scores - log_z)
    mu = np.zeros(structure.dim)
    for k, c in enumerate(structure.cliques):
        flat = np.ravel_multi_index(tuple(states[:, v] for v in c), structure.shapes[k])
        mu[structure.block(k)] = np.bincount(flat, weights=p, minlength=structure.sizes[k])
    return log_z, mu, states, p


def random_decomposable(rng, max_T=6, max_card=3):
    """Random chordal structure: each new variable joins a random subset of an existing clique.

    The model cliques are the maximal cliques plus a few random sub-cliques.
    """
    T = int(rng.integers(2, max_T + 1))
    cards = tuple(int(c) for c in rng.integers(2, max_card + 1, size=T))
    maximal = [{0}]
    for v in range(1, T):
        base = sorted(maximal[rng.integers(len(maximal))])
        k = int(rng.integers(0, min(2, len(base)) + 1))
        attach = set(rng.choice(base, size=k, replace=False).tolist()) if k else set()
        new = attach | {v}
        maximal = [c for c in maximal if not c <= new] + [new]
    cliques = {tuple(sorted(c)) for c in maximal}
    for c in list(cliques):
        if len(c) > 1 and rng.random() < 0.5:
            sub = sorted(rng.choice(c, size=int(rng.integers(1, len(c))), replace=False).tolist())
            cliques.add(tuple(sub))
    return ModelStructure(DomainSpec(cards), tuple(sorted(cliques)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def conic_map_chain3(theta, y, b, N, card=3):
    """max theta.n + H(n) - |y - n|_1 / b over M_N for the chain (0,1),(1,2), via a conic solver."""
    cp = pytest.importorskip("cvxpy")
    n01 = cp.Variable((card, card), nonneg=True)
    n12 = cp.Variable((card, card), nonneg=True)
    n1 = cp.sum(n01, axis=0)
    cons = [cp.sum(n01) == N, cp.sum(n12, axis=1) == n1]
    t01, t12 = theta[: card * card].reshape(card, card), theta[card * card:].reshape(card, card)
    y01, y12 = y[: card * card].reshape(card, card), y[card * card:].reshape(card, card)
    # H(n) = N (H01 + H12 - H1): joint entropy of (0,1) plus the conditional entropy of 2 given 1
    ent = (cp.sum(cp.entr(n01)) + N * np.log(N)
           - cp.sum(cp.rel_entr(n12, cp.reshape(n1, (card, 1), order="C") @ np.ones((1, card)))))
    obj = (cp.sum(cp.multiply(t01, n01)) + cp.sum(cp.multiply(t12, n12)) + ent
           - (cp.sum(cp.abs(y01 - n01)) + cp.sum(cp.abs(y12 - n12))) / b)
    prob = cp.Problem(cp.Maximize(obj), cons)
    prob.solve(solver="CLARABEL")
    return float(prob.value), np.concatenate([n01.value.ravel(), n12.value.ravel()])
