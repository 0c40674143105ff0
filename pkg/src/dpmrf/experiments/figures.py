"""Data behind the noisy-marginal error, regularization and scatter figures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..inference import sum_product_exact
from ..naive import FitConfig, fit_mle, naive_fit, project_release
from ..privacy import PrivacyBudget, perturb, predicted_mse
from ..distribution import kl_divergence, sample_counts
from .grid import ExperimentSpec, build_true_model
from .synthetic import child_seed


@dataclass
class MSERow:
    N: int
    epsilon: float
    empirical_mse: float
    std_error: float
    predicted_mse: float
    replicates: int


def fit_slope(N: np.ndarray, mse: np.ndarray) -> float:
    """Least-squares slope of log MSE against log N."""
    return float(np.polyfit(np.log(np.asarray(N, float)), np.log(np.asarray(mse, float)), 1)[0])


def marginal_mse_experiment(spec: ExperimentSpec) -> tuple[list[MSERow], dict[float, float]]:
    """MSE of the raw noisy marginals y / N against the true marginals.

    Each replicate draws a fresh population and fresh noise; the squared error
    is averaged over all cells, then over replicates (``num_replicates`` of
    them). Returns the per-(N, epsilon) rows and the fitted slope per epsilon.
    """
    model = build_true_model(spec)
    if model.metric_jt is None:
        raise ValueError("the noisy-marginal experiment needs an exact junction tree")
    calib = sum_product_exact(model.theta, model.metric_jt)
    mu = calib.marginals.values
    C = model.structure.num_cliques
    rows = []
    for N in spec.N_grid:
        for e_idx, eps in enumerate(spec.epsilon_grid):
            errs = np.empty(spec.num_replicates)
            for r in range(spec.num_replicates):
                rng = np.random.default_rng(child_seed(spec.master_seed, "population", N, e_idx, r))
                n = sample_counts(model.theta, N, model.metric_jt, rng, calibrated=calib)
                y = perturb(n, PrivacyBudget(eps), rng).y.values
                errs[r] = np.mean((y / N - mu) ** 2)
            pred = float(np.mean([predicted_mse(float(m), N, C, eps) for m in mu]))
            se = float(errs.std(ddof=1) / np.sqrt(errs.size)) if errs.size > 1 else float("nan")
            rows.append(MSERow(int(N), float(eps), float(errs.mean()), se, pred, spec.num_replicates))
    slopes = {}
    for eps in spec.epsilon_grid:
        sel = [r for r in rows if r.epsilon == eps]
        if len(sel) >= 2:
            slopes[float(eps)] = fit_slope([r.N for r in sel], [r.empirical_mse for r in sel])
    return rows, slopes


@dataclass
class SweepRow:
    curve: str  # "noisy" (naive-projected on the release) or "true" (MLE on the true counts)
    lam: float
    N: int
    epsilon: float
    population_id: int
    replicate_id: int
    kl: float
    zeros_in_projection: int


def lambda_sweep(spec: ExperimentSpec, lambda_grid: list[float]) -> list[SweepRow]:
    """KL against the regularization strength for noisy and true-statistics fits.

    Uses the first N and epsilon of the spec and its population x replicate nesting.
    """
    model = build_true_model(spec)
    if model.metric_jt is None:
        raise ValueError("the sweep needs exact KL")
    N, eps = spec.N_grid[0], spec.epsilon_grid[0]
    engine = model.fit_engine
    rows = []
    for i in range(spec.num_populations):
        n = sample_counts(model.theta, N, model.metric_jt,
                          np.random.default_rng(child_seed(spec.master_seed, "population", N, i)))
        for lam in lambda_grid:
            fit = fit_mle(n, model.structure, FitConfig(lam=lam), engine, N=N)
            rows.append(SweepRow("true", lam, N, eps, i, -1, kl_divergence(model.theta, fit.theta_hat, model.metric_jt),
                                 int(np.sum(n.values == 0))))
        for j in range(spec.num_replicates):
            release = perturb(n, PrivacyBudget(eps), child_seed(spec.master_seed, "noise", N, i, j))
            zeros = int(np.sum(project_release(release, N).values == 0))
            for lam in lambda_grid:
                fit = naive_fit(release, N, FitConfig(lam=lam), engine, project=True)
                rows.append(SweepRow("noisy", lam, N, eps, i, j,
                                     kl_divergence(model.theta, fit.theta_hat, model.metric_jt), zeros))
    return rows


def sweep_medians(rows: list[SweepRow]) -> dict[str, dict[float, float]]:
    out: dict[str, dict[float, list[float]]] = {}
    for r in rows:
        out.setdefault(r.curve, {}).setdefault(r.lam, []).append(r.kl)
    return {c: {lam: float(np.median(v)) for lam, v in d.items()} for c, d in out.items()}


SCATTER_COLUMNS = ("estimator", "edge", "config", "true_mu", "fitted_mu")


def scatter_dump(theta_true: np.ndarray, fits: dict[str, np.ndarray], jt) -> list[tuple]:
    """(estimator, edge, config, true_mu, fitted_mu) for every cell of every pairwise clique."""
    s = jt.structure
    mu = sum_product_exact(theta_true, jt).marginals
    rows = []
    for name, theta_hat in fits.items():
        mu_hat = sum_product_exact(theta_hat, jt).marginals
        for k, c in enumerate(s.cliques):
            if len(c) != 2:
                continue
            t, f = mu.table(k).ravel(), mu_hat.table(k).ravel()
            key = s.clique_key(k)
            rows.extend((name, key, idx, float(t[idx]), float(f[idx])) for idx in range(t.size))
    return rows


def scatter_rms(rows: list[tuple]) -> dict[str, float]:
    acc: dict[str, list[float]] = {}
    for name, _, _, t, f in rows:
        acc.setdefault(name, []).append((t - f) ** 2)
    return {k: float(np.sqrt(np.mean(v))) for k, v in acc.items()}
