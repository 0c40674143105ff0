"""Discrete log-linear models: domains, clique structures and clique tables.

Variables are 0-indexed. Parameters and clique tables share one flat layout:
cliques in structure order, each clique's configurations in row-major order
over its (sorted) variables.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

ROLES = ("counts", "noisy", "pseudo-marginal", "marginal")


class DomainError(ValueError):
    """An assignment, record or table does not fit the model domain."""


class StructureError(ValueError):
    """A clique structure or junction tree is malformed or inconsistent."""


@dataclass(frozen=True)
class DomainSpec:
    cardinalities: tuple[int, ...]

    def __post_init__(self):
        cards = tuple(int(c) for c in self.cardinalities)
        if len(cards) < 1:
            raise DomainError("need at least one variable")
        if any(c < 2 for c in cards):
            raise DomainError(f"every cardinality must be >= 2, got {cards}")
        object.__setattr__(self, "cardinalities", cards)

    @classmethod
    def uniform(cls, num_vars: int, card: int) -> "DomainSpec":
        return cls((card,) * num_vars)

    @property
    def num_vars(self) -> int:
        return len(self.cardinalities)


@dataclass(frozen=True)
class ModelStructure:
    domain: DomainSpec
    cliques: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        cliques = tuple(tuple(int(v) for v in c) for c in self.cliques)
        T = self.domain.num_vars
        seen = set()
        for c in cliques:
            if not c:
                raise StructureError("empty clique")
            if list(c) != sorted(set(c)):
                raise StructureError(f"clique {c} must be sorted and duplicate-free")
            if c[0] < 0 or c[-1] >= T:
                raise StructureError(f"clique {c} has indices outside 0..{T - 1}")
            if c in seen:
                raise StructureError(f"duplicate clique {c}")
            seen.add(c)
        object.__setattr__(self, "cliques", cliques)

    @classmethod
    def pairwise(cls, domain: DomainSpec, edges: Iterable[tuple[int, int]]) -> "ModelStructure":
        cliques = sorted({tuple(sorted(e)) for e in edges})
        return cls(domain, tuple(cliques))

    @property
    def num_cliques(self) -> int:
        return len(self.cliques)

    @cached_property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        cards = self.domain.cardinalities
        return tuple(tuple(cards[v] for v in c) for c in self.cliques)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([int(np.prod(s)) for s in self.shapes], dtype=np.int64)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def block(self, k: int) -> slice:
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def split(self, vec: np.ndarray) -> list[np.ndarray]:
        """Views of a flat vector as one array per clique, shaped by the clique."""
        vec = np.asarray(vec)
        if vec.shape != (self.dim,):
            raise DomainError(f"expected a vector of length {self.dim}, got {vec.shape}")
        return [vec[self.block(k)].reshape(self.shapes[k]) for k in range(self.num_cliques)]

    def edges(self) -> set[tuple[int, int]]:
        """Edges of the independence graph."""
        out = set()
        for c in self.cliques:
            for a in range(len(c)):
                for b in range(a + 1, len(c)):
                    out.add((c[a], c[b]))
        return out

    def is_pairwise(self) -> bool:
        return all(len(c) <= 2 for c in self.cliques)

    def clique_key(self, k: int) -> str:
        return "-".join(str(v) for v in self.cliques[k])


def config_index(shape: Sequence[int], assignment: Sequence[int]) -> int:
    """Row-major flat index of ``assignment`` in a clique table of ``shape``."""
    if len(shape) != len(assignment):
        raise DomainError("assignment length does not match clique")
    idx = 0
    for card, a in zip(shape, assignment):
        a = int(a)
        if not 0 <= a < card:
            raise DomainError(f"state {a} out of range for cardinality {card}")
        idx = idx * card + a
    return idx


def config_assignment(shape: Sequence[int], index: int) -> tuple[int, ...]:
    """Inverse of :func:`config_index`."""
    total = int(np.prod(shape))
    if not 0 <= index < total:
        raise DomainError(f"index {index} out of range for table of size {total}")
    return tuple(int(i) for i in np.unravel_index(index, tuple(shape)))


@dataclass(frozen=True)
class CliqueTableSet:
    """One dense table per clique, stored flat in the canonical layout."""

    structure: ModelStructure
    values: np.ndarray
    role: str = "counts"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.structure.dim,):
            raise DomainError(f"expected {self.structure.dim} values, got {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def tables(self) -> list[np.ndarray]:
        return self.structure.split(self.values)

    def table(self, k: int) -> np.ndarray:
        return self.values[self.structure.block(k)].reshape(self.structure.shapes[k])

    def totals(self) -> np.ndarray:
        return np.array([t.sum() for t in self.tables()])

    def with_values(self, values: np.ndarray, role: str | None = None) -> "CliqueTableSet":
        return CliqueTableSet(self.structure, values, role or self.role)

    def check(self, atol: float = 1e-8) -> None:
        """Raise DomainError if the role's invariants are violated."""
        if self.role in ("noisy", "pseudo-marginal"):
            return
        if self.values.min(initial=0.0) < -atol:
            raise DomainError(f"{self.role} tables must be nonnegative")
        totals = self.totals()
        target = 1.0 if self.role == "marginal" else totals[0]
        if np.any(np.abs(totals - target) > atol * max(1.0, abs(target))):
            raise DomainError(f"{self.role} tables do not share a common total")
        if shared_margin_gap(self) > atol * max(1.0, abs(target)):
            raise DomainError(f"{self.role} tables disagree on shared variables")


def margin(table: np.ndarray, clique: Sequence[int], onto: Sequence[int]) -> np.ndarray:
    """Sum a clique table down to the variables ``onto`` (a subset of ``clique``)."""
    axes = tuple(i for i, v in enumerate(clique) if v not in set(onto))
    return table.sum(axis=axes) if axes else table


def shared_margin_gap(tables: CliqueTableSet) -> float:
    """Largest disagreement between two cliques on their shared variables."""
    s = tables.structure
    ts = tables.tables()
    gap = 0.0
    for a in range(s.num_cliques):
        for b in range(a + 1, s.num_cliques):
            shared = sorted(set(s.cliques[a]) & set(s.cliques[b]))
            if not shared:
                continue
            ma = margin(ts[a], s.cliques[a], shared)
            mb = margin(ts[b], s.cliques[b], shared)
            gap = max(gap, float(np.abs(ma - mb).max()))
    return gap


@dataclass(frozen=True)
class Dataset:
    records: np.ndarray
    weights: np.ndarray | None = None
    ids: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        recs = np.asarray(self.records, dtype=np.int64)
        if recs.ndim != 2:
            raise DomainError("records must be a 2-d array (num_records, num_vars)")
        object.__setattr__(self, "records", recs)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (recs.shape[0],):
                raise DomainError("one weight per record required")
            if np.any(w < 0):
                raise DomainError("weights must be nonnegative")
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.records.shape[0]

    def weight_vector(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(len(self))
        return self.weights

    def total_weight(self) -> float:
        return float(self.weight_vector().sum())

    def validate(self, domain: DomainSpec) -> None:
        if self.records.shape[1] != domain.num_vars:
            raise DomainError(
                f"records have {self.records.shape[1]} attributes, domain has {domain.num_vars}"
            )
        if len(self) == 0:
            return
        cards = np.asarray(domain.cardinalities)
        if self.records.min() < 0 or np.any(self.records.max(axis=0) >= cards):
            raise DomainError("record values outside the domain")


def sufficient_statistics(data: Dataset, structure: ModelStructure) -> CliqueTableSet:
    """Weighted clique contingency tables of ``data``."""
    data.validate(structure.domain)
    w = data.weight_vector()
    out = np.zeros(structure.dim)
    for k, c in enumerate(structure.cliques):
        shape = structure.shapes[k]
        if len(data):
            flat = np.ravel_multi_index(tuple(data.records[:, v] for v in c), shape)
        else:
            flat = np.zeros(0, dtype=np.int64)
        out[structure.block(k)] = np.bincount(flat, weights=w, minlength=structure.sizes[k])
    return CliqueTableSet(structure, out, "counts")


def clique_scores(x: np.ndarray, theta: np.ndarray, structure: ModelStructure) -> np.ndarray:
    """Sum of log-potentials for each row of ``x`` (unnormalized log density)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    theta = np.asarray(theta, dtype=float)
    total = np.zeros(x.shape[0])
    for k, c in enumerate(structure.cliques):
        flat = np.ravel_multi_index(tuple(x[:, v] for v in c), structure.shapes[k])
        total += theta[structure.offsets[k] + flat]
    return total


def log_density(x: Sequence[int], theta: np.ndarray, log_z: float, structure: ModelStructure) -> float:
    return float(clique_scores(np.asarray(x)[None, :], theta, structure)[0] - log_z)


def log_likelihood(n: CliqueTableSet, theta: np.ndarray, log_z: float) -> float:
    """theta . n - N A(theta), with N read off the first clique table."""
    N = float(n.table(0).sum())
    return float(np.dot(theta, n.values) - N * log_z)
