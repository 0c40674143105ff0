"""Naive MLE: treat (optionally simplex-projected) noisy tables as exact counts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .inference import Engine
from .model import CliqueTableSet, ModelStructure
from .privacy import PrivateRelease

OPTIMIZERS = ("gradient", "lbfgs")


@dataclass(frozen=True)
class FitConfig:
    # penalty is per record: the fitted objective is theta.n - N*A(theta) - N*lam*|theta|^2
    lam: float = 1e-3
    optimizer: str = "lbfgs"
    grad_tol: float = 1e-6
    max_iters: int = 2000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.grad_tol <= 0 or self.max_iters < 1:
            raise ValueError("grad_tol must be positive and max_iters >= 1")


@dataclass
class FitResult:
    theta_hat: np.ndarray
    final_objective: float
    grad_norm: float
    converged: bool
    iterations: int
    warnings: list[str] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list, repr=False)
    free_params: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self, with_trace: bool = False) -> dict:
        out = {
            "theta": [float(t) for t in self.theta_hat],
            "objective": float(self.final_objective),
            "grad_norm": float(self.grad_norm),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }
        if self.warnings:
            out["warnings"] = list(self.warnings)
        if with_trace:
            out["trace"] = self.trace
        return out


def project_to_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto {w >= 0, sum(w) = total}."""
    if not total > 0:
        raise ValueError("total must be positive")
    v = np.asarray(v, dtype=float).ravel()
    return kernels.project_simplex_blocks(v, np.array([0, v.size], dtype=np.int64), float(total))


def project_release(release: PrivateRelease, N: float) -> CliqueTableSet:
    """Project each clique table of y / N onto the probability simplex independently."""
    if not N > 0:
        raise ValueError("N must be positive")
    s = release.structure
    vals = kernels.project_simplex_blocks(
        np.ascontiguousarray(release.y.values / N), s.offsets, 1.0
    )
    return CliqueTableSet(s, vals, "pseudo-marginal")


class _Objective:
    """Negated per-record objective and gradient over the free parameters; one inference call each."""

    def __init__(self, stats, N, lam, engine, tying):
        self.stats = np.asarray(stats, dtype=float)
        self.N = float(N)
        self.lam = lam
        self.engine = engine
        self.tying = tying
        self.calls = 0

    def expand(self, phi):
        return phi if self.tying is None else phi[self.tying]

    def __call__(self, phi):
        self.calls += 1
        theta = self.expand(phi)
        res = self.engine.run(theta)
        mu = res.marginals.values
        f = theta @ self.stats / self.N - res.log_partition - self.lam * (phi @ phi)
        g = self.stats / self.N - mu
        if self.tying is not None:
            g = np.bincount(self.tying, weights=g, minlength=phi.size)
        g = g - 2.0 * self.lam * phi
        return -f, -g


def _gradient_ascent(obj: _Objective, phi, cfg: FitConfig, trace):
    f, g = obj(phi)
    step = 1.0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if np.abs(g).max() <= cfg.grad_tol:
            it -= 1
            break
        gg = g @ g
        while True:
            cand = phi - step * g
            fc, gc = obj(cand)
            # Armijo condition on the minimized (negated) objective
            if np.isfinite(fc) and fc <= f - 1e-4 * step * gg:
                break
            step *= 0.5
            if step < 1e-14:
                return phi, f, g, it
        phi, f, g = cand, fc, gc
        trace.append({"iteration": it, "objective": -f, "step": step})
        step = min(step * 2.0, 1e3)
    return phi, f, g, it


def _lbfgs(obj: _Objective, phi, cfg: FitConfig, trace):
    def cb(xk):
        trace.append({"iteration": len(trace) + 1})

    res = minimize(
        obj, phi, jac=True, method="L-BFGS-B", callback=cb,
        options={"maxiter": cfg.max_iters, "gtol": cfg.grad_tol, "ftol": 1e-15, "maxcor": 20},
    )
    f, g = obj(res.x)
    return res.x, f, g, int(res.nit)


def fit_mle(
    stats: CliqueTableSet | np.ndarray,
    structure: ModelStructure,
    cfg: FitConfig,
    engine: Engine,
    N: float | None = None,
    theta0: np.ndarray | None = None,
    tying: np.ndarray | None = None,
) -> FitResult:
    """Maximize theta.n - N A(theta) - N lam |theta|^2.

    ``stats`` are count-scale tables (or marginals times N). ``N`` defaults to
    the total of the first table. ``tying`` maps every entry of theta to a free
    parameter index; gradients of tied entries are summed.
    """
    vals = stats.values if isinstance(stats, CliqueTableSet) else np.asarray(stats, dtype=float)
    if N is None:
        N = float(vals[structure.block(0)].sum())
    n_free = structure.dim if tying is None else int(np.max(tying)) + 1
    phi = np.zeros(n_free) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    obj = _Objective(vals, N, cfg.lam, engine, None if tying is None else np.asarray(tying))
    trace: list[dict] = []
    if cfg.optimizer == "gradient":
        phi, f, g, its = _gradient_ascent(obj, phi, cfg, trace)
    else:
        phi, f, g, its = _lbfgs(obj, phi, cfg, trace)
    grad_norm = float(np.abs(g).max())
    theta = obj.expand(phi)
    notes = []
    if not getattr(engine, "exact", True):
        notes.append("approximate inference engine")
    return FitResult(
        theta_hat=np.array(theta, dtype=float),
        final_objective=float(-f * N),
        grad_norm=grad_norm,
        converged=grad_norm <= cfg.grad_tol,
        iterations=its,
        warnings=notes,
        trace=trace,
        free_params=np.array(phi, dtype=float),
    )


def naive_fit(
    release: PrivateRelease,
    N: float,
    cfg: FitConfig,
    engine: Engine,
    project: bool = True,
    tying: np.ndarray | None = None,
) -> FitResult:
    """Fit directly to the noisy tables, or to their per-clique simplex projections."""
    if project:
        stats = project_release(release, N).values * N
    else:
        stats = release.y.values
    return fit_mle(stats, release.structure, cfg, engine, N=N, tying=tying)
