"""Nested population x replicate trial grids over (N, epsilon)."""
from __future__ import annotations

import dataclasses
import logging
import math
import re
import time
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..cgm import EMConfig, em_fit
from ..distribution import kl_divergence, sample, sample_counts
from ..inference import Engine, ExactEngine, LoopyEngine, sum_product_exact
from ..junction_tree import JunctionTree, build_junction_tree, junction_tree_from_cliques
from ..model import CliqueTableSet, DomainSpec, ModelStructure, clique_scores
from ..naive import FitConfig, FitResult, fit_mle, naive_fit
from ..privacy import PrivacyBudget, PrivateRelease, perturb
from .synthetic import child_seed, gen_potentials, gen_structure, random_marginals

log = logging.getLogger(__name__)

ESTIMATORS = ("naive", "naive-projected", "cgm", "nonprivate", "random")
METRICS = ("kl", "marginal_mse", "holdout_ll")


@dataclass(frozen=True)
class ExperimentSpec:
    model_kind: str = "chain"
    T: int = 5
    card: int = 5
    order: int = 3
    er_edge_prob: float = 0.3
    N_grid: tuple[int, ...] = (1000,)
    epsilon_grid: tuple[float, ...] = (0.1,)
    num_populations: int = 5
    num_replicates: int = 5
    master_seed: int = 0
    estimators: tuple[str, ...] = ("naive-projected", "cgm", "nonprivate")
    metric: str = "kl"
    lam: float = 1e-3
    max_em_iters: int = 50
    holdout_size: int = 2000
    # explicit structure: pairwise edges and, for loopy graphs, a triangulation for exact metrics
    edges: tuple[tuple[int, int], ...] | None = None
    tree_cliques: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        m = re.fullmatch(r"chain-order-(\d+)", self.model_kind)
        if m:
            object.__setattr__(self, "model_kind", "chain")
            object.__setattr__(self, "order", int(m.group(1)))
        if self.model_kind not in ("chain", "er", "time-homogeneous-chain"):
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if not self.N_grid or not self.epsilon_grid:
            raise ValueError("N and epsilon grids must be non-empty")
        if self.num_populations < 1 or self.num_replicates < 1:
            raise ValueError("need at least one population and one replicate")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ValueError(f"estimators must be a non-empty subset of {ESTIMATORS}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if any(e <= 0 for e in self.epsilon_grid) or any(n < 1 for n in self.N_grid):
            raise ValueError("grid values must be positive")
        for name in ("N_grid", "epsilon_grid", "estimators"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.edges is not None:
            object.__setattr__(self, "edges", tuple(tuple(int(v) for v in e) for e in self.edges))
        if self.tree_cliques is not None:
            object.__setattr__(self, "tree_cliques", tuple(tuple(int(v) for v in c) for c in self.tree_cliques))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d


@dataclass
class TrialResult:
    N: int
    epsilon: float
    population_id: int
    replicate_id: int
    estimator: str
    metric: str
    value: float
    converged: bool
    iterations: int
    wall_time: float = field(default=0.0, compare=False)
    error: str = ""

    COLUMNS = ("N", "epsilon", "population_id", "replicate_id", "estimator",
               "metric", "value", "converged", "iterations", "error")


@dataclass
class TrueModel:
    """The generating model of a grid, with the engines used for fitting and scoring."""

    structure: ModelStructure
    theta: np.ndarray
    fit_engine: Engine
    metric_jt: JunctionTree | None
    tying: np.ndarray | None = None

    @property
    def exact_marginals(self) -> np.ndarray:
        if self.metric_jt is None:
            raise ValueError("no exact junction tree for this model")
        return sum_product_exact(self.theta, self.metric_jt).marginals.values


def build_true_model(spec: ExperimentSpec) -> TrueModel:
    rng = np.random.default_rng(child_seed(spec.master_seed, "model"))
    if spec.edges is not None:
        s = ModelStructure.pairwise(DomainSpec.uniform(spec.T, spec.card), spec.edges)
    else:
        s = gen_structure(spec.model_kind, spec.T, spec.card, rng, order=spec.order, edge_prob=spec.er_edge_prob)
    theta = gen_potentials(s, rng)
    jt = build_junction_tree(s)
    if jt is not None:
        return TrueModel(s, theta, ExactEngine(jt), jt)
    metric_jt = junction_tree_from_cliques(s, spec.tree_cliques) if spec.tree_cliques else None
    return TrueModel(s, theta, LoopyEngine(s), metric_jt)


def fit_estimator(
    name: str,
    release: PrivateRelease,
    n: CliqueTableSet,
    N: float,
    engine: Engine,
    lam: float,
    seed: int,
    max_em_iters: int = 50,
    tying: np.ndarray | None = None,
) -> FitResult:
    """Dispatch one estimator. ``n`` is only read by the non-private and random references."""
    s = release.structure
    cfg = FitConfig(lam=lam)
    if name == "naive":
        return naive_fit(release, N, cfg, engine, project=False, tying=tying)
    if name == "naive-projected":
        return naive_fit(release, N, cfg, engine, project=True, tying=tying)
    if name == "cgm":
        return em_fit(release, N, EMConfig(max_em_iters=max_em_iters), engine, tying=tying)
    if name == "nonprivate":
        return fit_mle(n, s, cfg, engine, N=N, tying=tying)
    if name == "random":
        rnd = random_marginals(s, np.random.default_rng(seed)) * N
        return fit_mle(rnd, s, cfg, engine, N=N, tying=tying)
    raise ValueError(f"unknown estimator {name!r}")


def log_partition_of(theta: np.ndarray, model: TrueModel) -> float:
    if model.metric_jt is not None:
        return sum_product_exact(theta, model.metric_jt).log_partition
    return model.fit_engine.run(theta).log_partition


def holdout_loglik(theta: np.ndarray, records: np.ndarray, weights: np.ndarray | None,
                   structure: ModelStructure, log_z: float) -> float:
    """Weighted mean log density of held-out records."""
    scores = clique_scores(records, theta, structure) - log_z
    if weights is None:
        return float(scores.mean())
    return float(np.dot(weights, scores) / weights.sum())


def evaluate(metric: str, theta_hat: np.ndarray, model: TrueModel, holdout: np.ndarray | None = None) -> float:
    if metric == "kl":
        return kl_divergence(model.theta, theta_hat, model.metric_jt)
    if metric == "marginal_mse":
        if model.metric_jt is not None:
            mu_hat = sum_product_exact(theta_hat, model.metric_jt).marginals.values
        else:
            mu_hat = model.fit_engine.run(theta_hat).marginals.values
        return float(np.mean((mu_hat - model.exact_marginals) ** 2))
    if metric == "holdout_ll":
        return holdout_loglik(theta_hat, holdout, None, model.structure, log_partition_of(theta_hat, model))
    raise ValueError(f"unknown metric {metric!r}")


def _population(model: TrueModel, N: int, seed: int) -> CliqueTableSet:
    rng = np.random.default_rng(seed)
    if model.metric_jt is not None:
        return sample_counts(model.theta, N, model.metric_jt, rng)
    raise ValueError("sampling populations needs an exact junction tree")


def run_grid(spec: ExperimentSpec) -> Iterator[TrialResult]:
    """Yield one result per (N, epsilon, population, replicate, estimator), in that order.

    Population i at a given N is shared by every epsilon and replicate; the
    noise of replicate j is one standard Laplace draw scaled by each epsilon.
    A failed fit is reported with value NaN and the error message.
    """
    model = build_true_model(spec)
    metric = spec.metric
    if metric == "kl" and model.metric_jt is None:
        log.warning("no exact junction tree for KL; reporting holdout log-likelihood")
        metric = "holdout_ll"
    holdout = None
    if metric == "holdout_ll":
        if model.metric_jt is None:
            raise ValueError("holdout sampling needs an exact junction tree; supply tree_cliques")
        rng = np.random.default_rng(child_seed(spec.master_seed, "split"))
        holdout = sample(model.theta, spec.holdout_size, model.metric_jt, rng).records
    for N in spec.N_grid:
        for i in range(spec.num_populations):
            n = _population(model, N, child_seed(spec.master_seed, "population", N, i))
            for eps in spec.epsilon_grid:
                for j in range(spec.num_replicates):
                    release = perturb(n, PrivacyBudget(eps), child_seed(spec.master_seed, "noise", N, i, j))
                    for name in spec.estimators:
                        seed = child_seed(spec.master_seed, name, N, i, j)
                        yield _trial(name, release, n, N, eps, i, j, model, metric, holdout, spec, seed)


def _trial(name, release, n, N, eps, i, j, model, metric, holdout, spec, seed) -> TrialResult:
    t0 = time.perf_counter()
    try:
        fit = fit_estimator(name, release, n, N, model.fit_engine, spec.lam, seed, spec.max_em_iters)
        value = evaluate(metric, fit.theta_hat, model, holdout)
        ok, iters, err = fit.converged, fit.iterations, ""
    except Exception as exc:  # recorded, the grid continues
        log.exception("trial failed: %s N=%s eps=%s pop=%s rep=%s", name, N, eps, i, j)
        value, ok, iters, err = math.nan, False, 0, f"{type(exc).__name__}: {exc}"
    return TrialResult(int(N), float(eps), i, j, name, metric, float(value), bool(ok), int(iters),
                       time.perf_counter() - t0, err)


def summarize(results: list[TrialResult]) -> dict[tuple[int, float, str], float]:
    """Median metric value per (N, epsilon, estimator), ignoring failed trials."""
    groups: dict[tuple[int, float, str], list[float]] = {}
    for r in results:
        if not r.error:
            groups.setdefault((r.N, r.epsilon, r.estimator), []).append(r.value)
    return {k: float(np.median(v)) for k, v in groups.items()}
