"""Laplace mechanism over clique contingency tables."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CliqueTableSet, Dataset, DomainError, ModelStructure, sufficient_statistics


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class PrivateRelease:
    y: CliqueTableSet
    epsilon: float
    sensitivity: float
    seed: int | None = None

    @property
    def noise_scale(self) -> float:
        return self.sensitivity / self.epsilon

    @property
    def structure(self) -> ModelStructure:
        return self.y.structure


def sensitivity(structure: ModelStructure, per_record_weight_cap: float = 1.0) -> float:
    """L1 sensitivity of the clique tables: one unit of weight lands in every table."""
    return structure.num_cliques * float(per_record_weight_cap)


def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    """Inverse-CDF Laplace(0, scale) draws from one uniform per draw."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    u = 0.5 - rng.random(size)  # in (-1/2, 1/2]
    tail = np.maximum(1.0 - 2.0 * np.abs(u), np.finfo(float).tiny)
    out = -scale * np.sign(u) * np.log(tail)
    return float(out) if size is None else out


def _generator(rng: np.random.Generator | int | None) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    if rng is None:
        raise ValueError("pass a seed or a numpy Generator")
    return np.random.default_rng(int(rng)), int(rng)


def perturb(n: CliqueTableSet, budget: PrivacyBudget, rng: np.random.Generator | int) -> PrivateRelease:
    """Add i.i.d. Laplace(|C| / epsilon) noise to every cell of every table.

    Passing an integer seed records it in the release so the noise can be replayed.
    """
    gen, seed = _generator(rng)
    delta = sensitivity(n.structure)
    if math.isinf(budget.epsilon):
        noise = np.zeros(n.structure.dim)
    else:
        noise = laplace_sample(delta / budget.epsilon, gen, size=n.structure.dim)
    return PrivateRelease(n.with_values(n.values + noise, "noisy"), budget.epsilon, delta, seed)


def replay(release: PrivateRelease, n: CliqueTableSet) -> PrivateRelease:
    if release.seed is None:
        raise ValueError("release has no recorded seed")
    return perturb(n, PrivacyBudget(release.epsilon), release.seed)


def predicted_mse(mu: float, N: float, num_cliques: int, epsilon: float) -> float:
    """Sampling variance plus Laplace variance of a noisy cell divided by N."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must be a probability")
    noise = 0.0 if math.isinf(epsilon) else 2.0 * num_cliques**2 / (N**2 * epsilon**2)
    return mu * (1.0 - mu) / N + noise


def crossover_population(mu: float, num_cliques: int, epsilon: float) -> float:
    """Population size where the sampling and privacy error terms are equal."""
    return 2.0 * num_cliques**2 / (epsilon**2 * mu * (1.0 - mu))


def individual_contributions(data: Dataset, structure: ModelStructure) -> np.ndarray:
    """Per-individual L1 contribution to each clique table, shape (individuals, cliques).

    Records sharing an id belong to one individual; without ids each record is one.
    """
    w = data.weight_vector()
    ids = np.arange(len(data)) if data.ids is None else np.asarray(data.ids)
    _, inv = np.unique(ids, return_inverse=True)
    per = np.bincount(inv, weights=w, minlength=inv.max() + 1 if len(inv) else 0)
    return np.repeat(per[:, None], structure.num_cliques, axis=1)


def check_contribution_cap(data: Dataset, structure: ModelStructure, cap: float = 1.0) -> None:
    contrib = individual_contributions(data, structure)
    if contrib.size and contrib.max() > cap * (1 + 1e-12):
        raise DomainError(
            f"an individual contributes {contrib.max():.6g} > {cap} to a table; "
            "the sensitivity bound would not hold"
        )


def private_statistics(
    data: Dataset, structure: ModelStructure, budget: PrivacyBudget, seed: int
) -> PrivateRelease:
    """Count, enforce the per-individual weight cap, and perturb."""
    check_contribution_cap(data, structure)
    return perturb(sufficient_statistics(data, structure), budget, seed)
