"""Inference over latent sufficient statistics given a noisy release, and EM on top of it."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .inference import Engine, cgm_entropy
from .junction_tree import JunctionTree
from .model import CliqueTableSet, DomainError, shared_margin_gap
from .naive import FitConfig, FitResult, fit_mle
from .privacy import PrivateRelease

log = logging.getLogger(__name__)


NLBP_METHODS = ("dual", "damped")
_DUAL_RESTARTS = 10


@dataclass(frozen=True)
class NLBPConfig:
    """NLBP settings.

    ``method="damped"`` runs the literal tilt / BP / damp loop. ``method="dual"``
    solves the same fixed-point conditions (tilt inside the Laplace
    subdifferential box, n = N * BP(theta + tilt)) by box-constrained
    quasi-Newton on the tilt; every evaluation is one BP call. ``tol`` bounds
    the fixed-point residual in per-record units. The inner BP settings live
    on the engine.
    """

    alpha: float = 0.5
    tol: float = 1e-7
    max_iters: int = 500
    method: str = "dual"
    # step decay: the damping at iteration t is alpha / (1 + t / decay); 0 keeps it fixed
    decay: float = 0.0
    # half-width of the linear blend around the Laplace kink, in units of N * noise scale
    smoothing: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.tol <= 0 or self.max_iters < 1 or self.decay < 0 or self.smoothing < 0:
            raise ValueError("invalid NLBP settings")
        if self.method not in NLBP_METHODS:
            raise ValueError(f"method must be one of {NLBP_METHODS}")


@dataclass(frozen=True)
class EMConfig:
    nlbp: NLBPConfig = field(default_factory=NLBPConfig)
    fit: FitConfig = field(default_factory=lambda: FitConfig(lam=1e-6))
    em_tol: float = 1e-4
    max_em_iters: int = 50


@dataclass
class NLBPResult:
    n: CliqueTableSet
    converged: bool
    residual: float
    iterations: int
    trace: list[dict] = field(default_factory=list, repr=False)
    tilt: np.ndarray | None = field(default=None, repr=False)


def noise_gradient(
    y: np.ndarray, n: np.ndarray, epsilon: float, delta_sens: float, halfwidth: float = 0.0
) -> np.ndarray:
    """Gradient in n of the Laplace log-likelihood log p(y | n).

    At y == n the subgradient 0 is used; ``halfwidth`` > 0 blends the sign
    linearly over |y - n| < halfwidth.
    """
    b = delta_sens / epsilon
    diff = np.asarray(y, dtype=float) - np.asarray(n, dtype=float)
    if halfwidth > 0:
        return np.clip(diff / halfwidth, -1.0, 1.0) / b
    return np.sign(diff) / b


def laplace_loglik(y: np.ndarray, n: np.ndarray, epsilon: float, delta_sens: float) -> float:
    b = delta_sens / epsilon
    diff = np.asarray(y, dtype=float) - np.asarray(n, dtype=float)
    return float(-np.abs(diff).sum() / b - diff.size * np.log(2.0 * b))


def check_scaled_polytope(n: CliqueTableSet, N: float, atol: float = 1e-8) -> None:
    """Raise DomainError unless n is nonnegative, sums to N per table and is consistent."""
    tol = atol * max(1.0, N)
    if n.values.min(initial=0.0) < -tol:
        raise DomainError("tables have negative entries")
    if np.any(np.abs(n.totals() - N) > tol):
        raise DomainError("tables do not all sum to N")
    if shared_margin_gap(n) > tol:
        raise DomainError("tables disagree on shared variables")


def map_objective(
    n: CliqueTableSet,
    theta: np.ndarray,
    y: CliqueTableSet,
    epsilon: float,
    delta_sens: float,
    jt: JunctionTree,
) -> float:
    """theta.n + H(n) + log p(y | n) for n in the scaled marginal polytope."""
    N = float(n.table(0).sum())
    check_scaled_polytope(n, N)
    return (
        float(np.asarray(theta) @ n.values)
        + cgm_entropy(n, jt)
        + laplace_loglik(y.values, n.values, epsilon, delta_sens)
    )


def fixed_point_residual(tilt: np.ndarray, mu: np.ndarray, y: np.ndarray, N: float, bound: float) -> float:
    """Violation of the NLBP fixed-point conditions, per record.

    Inside the box the tilted marginals must reproduce y / N; at the upper
    (lower) bound they may only fall short of (exceed) it.
    """
    g = mu - np.asarray(y) / N
    at_hi = tilt >= bound * (1 - 1e-12)
    at_lo = tilt <= -bound * (1 - 1e-12)
    v = np.abs(g)
    v = np.where(at_hi, np.maximum(g, 0.0), v)
    v = np.where(at_lo, np.maximum(-g, 0.0), v)
    return float(v.max()) if v.size else 0.0


def _nlbp_dual(theta, release, N, cfg, engine, tilt0):
    y = release.y.values
    bound = 1.0 / release.noise_scale
    trace = []

    def dual(tilt):
        res = engine.run(theta + tilt)
        mu = res.marginals.values
        trace.append({"evaluation": len(trace) + 1})
        return res.log_partition - tilt @ y / N, mu - y / N

    tilt = np.zeros(theta.size) if tilt0 is None else np.clip(tilt0, -bound, bound)
    iters = 0
    best_f = np.inf
    # L-BFGS-B can stall on the flat overcomplete directions; a fresh start clears its memory
    for _ in range(_DUAL_RESTARTS):
        opt = minimize(
            dual, tilt, jac=True, method="L-BFGS-B",
            bounds=[(-bound, bound)] * theta.size,
            options={"maxiter": cfg.max_iters, "gtol": cfg.tol, "ftol": 0.0, "maxcor": 30},
        )
        tilt = opt.x
        iters += int(opt.nit)
        mu = engine.run(theta + tilt).marginals.values
        residual = fixed_point_residual(tilt, mu, y, N, bound)
        if residual <= cfg.tol or opt.fun >= best_f or iters >= cfg.max_iters:
            break
        best_f = opt.fun
    return NLBPResult(
        CliqueTableSet(release.structure, N * mu, "counts"),
        converged=residual <= cfg.tol,
        residual=residual,
        iterations=iters,
        trace=trace,
        tilt=tilt,
    )


def _nlbp_damped(theta, release, N, cfg, engine, n0):
    s = release.structure
    y = release.y.values
    eps, delta = release.epsilon, release.sensitivity
    if n0 is None:
        n = np.concatenate([np.full(size, N / size) for size in s.sizes])
    else:
        n = np.asarray(n0, dtype=float).copy()
    halfwidth = cfg.smoothing * N * release.noise_scale
    best = (np.inf, n, None)
    trace = []
    residual = np.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        g = noise_gradient(y, n, eps, delta, halfwidth)
        n_new = N * engine.run(theta + g).marginals.values
        residual = float(np.abs(n_new - n).max()) / N
        trace.append({"iteration": it, "residual": residual})
        if residual < best[0]:
            best = (residual, n, g)
        if residual <= cfg.tol:
            break
        a = cfg.alpha / (1.0 + it / cfg.decay) if cfg.decay > 0 else cfg.alpha
        n = (1.0 - a) * n + a * n_new
    res_best, n_best, g_best = best
    return NLBPResult(
        CliqueTableSet(s, n_best, "counts"),
        converged=res_best <= cfg.tol,
        residual=res_best,
        iterations=it,
        trace=trace,
        tilt=g_best,
    )


def nlbp(
    theta: np.ndarray,
    release: PrivateRelease,
    N: float,
    cfg: NLBPConfig,
    engine: Engine,
    n0: np.ndarray | None = None,
    tilt0: np.ndarray | None = None,
) -> NLBPResult:
    """Approximate MAP of the latent tables given the release (non-linear BP).

    With an exact engine on a decomposable model the fixed point maximizes
    theta.n + H(n) + log p(y | n) over the scaled marginal polytope.
    The damped method returns its smallest-residual iterate.
    """
    theta = np.asarray(theta, dtype=float)
    if cfg.method == "dual":
        return _nlbp_dual(theta, release, N, cfg, engine, tilt0)
    return _nlbp_damped(theta, release, N, cfg, engine, n0)


def em_fit(
    release: PrivateRelease,
    N: float,
    cfg: EMConfig,
    engine: Engine,
    tying: np.ndarray | None = None,
    theta0: np.ndarray | None = None,
) -> FitResult:
    """EM over latent sufficient statistics: NLBP E-step, MLE M-step.

    The E-step is warm-started from the previous tilt. Untied M-steps start
    from theta + tilt, which already reproduces the inferred tables; tied
    M-steps start from the previous free parameters.
    """
    s = release.structure
    n_free = s.dim if tying is None else int(np.max(tying)) + 1
    phi = np.zeros(n_free) if theta0 is None else np.asarray(theta0, dtype=float)
    theta = phi if tying is None else phi[tying]
    notes: list[str] = []
    trace: list[dict] = []
    fit = None
    n_prev = None
    tilt = None
    converged = False
    it = 0
    for it in range(1, cfg.max_em_iters + 1):
        e = nlbp(theta, release, N, cfg.nlbp, engine, n0=n_prev, tilt0=tilt)
        if not e.converged:
            notes.append(f"E-step {it}: NLBP residual {e.residual:.3g} after {e.iterations} iterations")
        n_prev = e.n.values
        start = phi
        if tying is None and cfg.nlbp.method == "dual":
            start = theta + e.tilt
        fit = fit_mle(e.n, s, cfg.fit, engine, N=N, theta0=start, tying=tying)
        if not fit.converged:
            notes.append(f"M-step {it}: gradient norm {fit.grad_norm:.3g}")
        change = float(np.abs(fit.theta_hat - theta).max())
        trace.append({
            "em_iteration": it,
            "nlbp_iterations": e.iterations,
            "nlbp_residual": e.residual,
            "theta_change": change,
            "objective": fit.final_objective,
        })
        if cfg.nlbp.method == "dual":
            # the tilt is relative to theta, so carry it over to the new parameters
            tilt = np.clip(theta + e.tilt - fit.theta_hat, -1 / release.noise_scale, 1 / release.noise_scale)
        phi = fit.free_params
        theta = fit.theta_hat
        if change <= cfg.em_tol:
            converged = True
            break
    return FitResult(
        theta_hat=theta,
        final_objective=fit.final_objective,
        grad_norm=fit.grad_norm,
        converged=converged,
        iterations=it,
        warnings=notes,
        trace=trace,
        free_params=phi,
    )
