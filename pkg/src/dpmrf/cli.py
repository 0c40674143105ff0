"""Command-line entry point: ``dpmrf <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 some trials failed
(partial results are still written).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import io
from .cgm import EMConfig, em_fit
from .distribution import kl_divergence, sample, sample_counts
from .inference import ExactEngine, LoopyEngine, sum_product_exact
from .junction_tree import build_junction_tree, junction_tree_from_cliques, triangulated_junction_tree
from .model import DomainError, StructureError, sufficient_statistics
from .naive import FitConfig, fit_mle, naive_fit
from .privacy import PrivacyBudget, check_contribution_cap, perturb
from .experiments import figures, mobility
from .experiments.grid import ExperimentSpec, TrialResult, build_true_model, fit_estimator, holdout_loglik, run_grid
from .experiments.synthetic import child_seed, gen_potentials, gen_structure, tying_homogeneous_chain

log = logging.getLogger("dpmrf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _exact_tree(s, meta: dict | None = None):
    jt = build_junction_tree(s)
    if jt is None and meta and meta.get("tree_cliques"):
        jt = junction_tree_from_cliques(s, meta["tree_cliques"])
    return jt


def _engine(s, meta=None):
    jt = _exact_tree(s, meta)
    return ExactEngine(jt) if jt is not None else LoopyEngine(s)


def _tying(s, meta, requested: bool):
    if requested or (meta or {}).get("tied"):
        return tying_homogeneous_chain(s)
    return None


def cmd_gen_model(a):
    rng = np.random.default_rng(child_seed(a.seed, "model"))
    s = gen_structure(a.kind, a.T, a.card, rng, order=a.order, edge_prob=a.edge_prob)
    theta = gen_potentials(s, rng)
    extra = {"seed": a.seed}
    if a.triangulate and build_junction_tree(s) is None:
        extra["tree_cliques"] = [list(c) for c in triangulated_junction_tree(s).tree_cliques]
    io.save_model(a.out, s, theta, **extra)
    return 0


def cmd_sample(a):
    s, theta, meta = io.load_model(a.model)
    if theta is None:
        raise UsageError("model file has no theta")
    jt = _exact_tree(s, meta)
    if jt is None:
        raise UsageError("sampling needs a junction tree; regenerate the model with --triangulate")
    data = sample(theta, a.N, jt, np.random.default_rng(child_seed(a.seed, "population")))
    io.save_dataset(a.out, data)
    return 0


def cmd_perturb(a):
    s, _, _ = io.load_model(a.model)
    data = io.load_dataset(a.data)
    check_contribution_cap(data, s)
    n = sufficient_statistics(data, s)
    release = perturb(n, PrivacyBudget(a.epsilon), a.seed)
    N = len(np.unique(data.ids)) if data.ids is not None else data.total_weight()
    io.save_release(a.out, release, N=N)
    return 0


def cmd_fit(a):
    meta = {}
    n = None
    if a.release:
        release, N = io.load_release(a.release)
        s = release.structure
    else:
        if not (a.model and a.data):
            raise UsageError("fit needs --release, or --model and --data")
        s, _, meta = io.load_model(a.model)
        data = io.load_dataset(a.data)
        n = sufficient_statistics(data, s)
        N = len(np.unique(data.ids)) if data.ids is not None else data.total_weight()
        release = None
        if a.estimator != "nonprivate":
            if a.epsilon is None:
                raise UsageError("private estimators fitted from data need --epsilon")
            release = perturb(n, PrivacyBudget(a.epsilon), a.seed)
    if a.N is not None:
        N = a.N
    if N is None:
        raise UsageError("N is unknown; pass --N")
    engine = _engine(s, meta)
    tying = _tying(s, meta, a.tie)
    cfg = FitConfig(lam=a.lam, optimizer=a.optimizer)
    if a.estimator == "nonprivate":
        if n is None:
            raise UsageError("the non-private fit needs --model and --data")
        fit = fit_mle(n, s, cfg, engine, N=N, tying=tying)
    elif a.estimator == "naive":
        fit = naive_fit(release, N, cfg, engine, project=not a.no_project, tying=tying)
    else:
        fit = em_fit(release, N, EMConfig(max_em_iters=a.max_em_iters), engine, tying=tying)
    io.save_fit(a.out, fit, with_trace=a.trace, estimator=a.estimator, N=float(N))
    return 0


def cmd_eval(a):
    s, theta_true, meta = io.load_model(a.model)
    theta_hat = io.load_fit_theta(a.fit)
    if theta_hat.shape != (s.dim,):
        raise UsageError("fit and model have different parameter layouts")
    jt = _exact_tree(s, meta)
    if a.metric in ("kl", "mse"):
        if theta_true is None or jt is None:
            raise UsageError(f"{a.metric} needs a true model with an exact junction tree")
        if a.metric == "kl":
            value = kl_divergence(theta_true, theta_hat, jt)
        else:
            mu = sum_product_exact(theta_true, jt).marginals.values
            value = float(np.mean((sum_product_exact(theta_hat, jt).marginals.values - mu) ** 2))
    else:
        if not a.data:
            raise UsageError("holdout-ll needs --data")
        data = io.load_dataset(a.data)
        log_z = (ExactEngine(jt) if jt is not None else LoopyEngine(s)).run(theta_hat).log_partition
        value = holdout_loglik(theta_hat, data.records, data.weights, s, log_z)
    rows = [(a.metric, float(value))]
    if a.out:
        io.write_csv(a.out, ("metric", "value"), rows)
    print(f"{a.metric},{float(value)!r}")
    return 0


def _grid_rows(spec: ExperimentSpec, timing: bool):
    results = list(run_grid(spec))
    cols = TrialResult.COLUMNS + (("wall_time",) if timing else ())
    rows = []
    for r in results:
        row = [getattr(r, c) for c in TrialResult.COLUMNS]
        if timing:
            row.append(r.wall_time)
        rows.append(row)
    failed = sum(1 for r in results if r.error)
    return cols, rows, failed


def cmd_grid(a):
    with open(a.spec) as fh:
        raw = json.load(fh)
    kind = raw.pop("experiment", "grid")
    sidecar = {"experiment": kind}
    failed = 0
    if kind == "grid":
        spec = ExperimentSpec.from_dict(raw)
        cols, rows, failed = _grid_rows(spec, a.timing)
        sidecar["spec"] = spec.to_dict()
    elif kind == "marginal-mse":
        spec = ExperimentSpec.from_dict(raw)
        res, slopes = figures.marginal_mse_experiment(spec)
        cols = ("N", "epsilon", "empirical_mse", "std_error", "predicted_mse", "replicates")
        rows = [[getattr(r, c) for c in cols] for r in res]
        sidecar.update(spec=spec.to_dict(), slopes={repr(k): v for k, v in slopes.items()})
    elif kind == "lambda-sweep":
        grid = [float(x) for x in raw.pop("lambda_grid", [1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0])]
        spec = ExperimentSpec.from_dict(raw)
        res = figures.lambda_sweep(spec, grid)
        cols = ("curve", "lam", "N", "epsilon", "population_id", "replicate_id", "kl", "zeros_in_projection")
        rows = [[getattr(r, c) for c in cols] for r in res]
        sidecar.update(spec=spec.to_dict(), lambda_grid=grid)
    elif kind == "scatter":
        spec = ExperimentSpec.from_dict(raw)
        cols, rows = figures.SCATTER_COLUMNS, _scatter(spec)
        sidecar["spec"] = spec.to_dict()
    elif kind == "mobility":
        spec = mobility.MobilitySpec.from_dict(raw)
        res, ing = mobility.mobility_experiment(spec)
        cols = ("epsilon", "estimator", "holdout_ll", "converged", "N_train")
        rows = [[getattr(r, c) for c in cols] for r in res]
        sidecar.update(spec={**raw}, skipped_rows=ing.skipped_rows, individuals=ing.num_individuals)
    else:
        raise UsageError(f"unknown experiment {kind!r}")
    io.write_csv(a.out, cols, rows)
    sidecar["master_seed"] = raw.get("master_seed", 0)
    sidecar["failed_trials"] = failed
    io.write_sidecar(a.out + ".json", sidecar)
    if failed:
        print(f"{failed} trial(s) failed; partial results written to {a.out}", file=sys.stderr)
        return 2
    return 0


def _scatter(spec: ExperimentSpec):
    """Fit every estimator on population 0, replicate 0 at the first grid point."""
    model = build_true_model(spec)
    if model.metric_jt is None:
        raise UsageError("scatter needs an exact junction tree")
    N, eps = spec.N_grid[0], spec.epsilon_grid[0]
    n = sample_counts(model.theta, N, model.metric_jt,
                      np.random.default_rng(child_seed(spec.master_seed, "population", N, 0)))
    release = perturb(n, PrivacyBudget(eps), child_seed(spec.master_seed, "noise", N, 0, 0))
    fits = {}
    for name in spec.estimators:
        fit = fit_estimator(name, release, n, N, model.fit_engine, spec.lam,
                            child_seed(spec.master_seed, name, N, 0, 0), spec.max_em_iters)
        fits[name] = fit.theta_hat
    return figures.scatter_dump(model.theta, fits, model.metric_jt)


def cmd_ingest(a):
    events = mobility.read_events(a.events)
    ing = mobility.mobility_ingest(events, a.interval, a.segment_hours, a.locations)
    io.save_dataset(a.out, ing.data)
    if a.structure_out:
        io.save_model(a.structure_out, ing.structure, tied=True)
    print(f"records={len(ing.data)} individuals={ing.num_individuals} skipped_rows={ing.skipped_rows}",
          file=sys.stderr)
    return 0


def cmd_gen_mobility(a):
    params = mobility.MobilityParams(num_locations=a.locations)
    rows, _ = mobility.gen_mobility(a.users, a.days, child_seed(a.seed, "population"), params)
    mobility.write_events(a.out, rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpmrf", description="Learn discrete MRFs from Laplace-perturbed clique tables.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-model", help="random structure and Dirichlet potentials")
    g.add_argument("--kind", choices=["chain", "er", "time-homogeneous-chain"], default="chain")
    g.add_argument("--T", type=int, default=5)
    g.add_argument("--card", type=int, default=5)
    g.add_argument("--order", type=int, default=3)
    g.add_argument("--edge-prob", type=float, default=0.3)
    g.add_argument("--triangulate", action="store_true", help="store a triangulated tree for loopy graphs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_model)

    g = sub.add_parser("sample", help="exact i.i.d. records from a model")
    g.add_argument("--model", required=True)
    g.add_argument("--N", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_sample)

    g = sub.add_parser("perturb", help="release Laplace-perturbed clique tables of a dataset")
    g.add_argument("--model", required=True, help="model or structure JSON")
    g.add_argument("--data", required=True)
    g.add_argument("--epsilon", type=float, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_perturb)

    g = sub.add_parser("fit", help="estimate parameters")
    g.add_argument("--estimator", choices=["naive", "cgm", "nonprivate"], required=True)
    g.add_argument("--release")
    g.add_argument("--model", help="model or structure JSON (with --data)")
    g.add_argument("--data")
    g.add_argument("--epsilon", type=float, help="perturb --data in-process with this budget")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--N", type=float, help="public population size (default: from the release or data)")
    g.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    g.add_argument("--optimizer", choices=["lbfgs", "gradient"], default="lbfgs")
    g.add_argument("--no-project", action="store_true", help="naive: fit raw noisy tables")
    g.add_argument("--tie", action="store_true", help="tie edge potentials of a time-homogeneous chain")
    g.add_argument("--max-em-iters", type=int, default=50)
    g.add_argument("--trace", action="store_true", help="include the per-iteration trace")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_fit)

    g = sub.add_parser("eval", help="score a fit against a true model or held-out data")
    g.add_argument("--model", required=True)
    g.add_argument("--fit", required=True)
    g.add_argument("--metric", choices=["kl", "mse", "holdout-ll"], required=True)
    g.add_argument("--data")
    g.add_argument("--out")
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("grid", help="run an experiment spec")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--timing", action="store_true", help="add a wall_time column (not reproducible)")
    g.set_defaults(func=cmd_grid)

    g = sub.add_parser("ingest-mobility", help="discretize an event log into weighted records")
    g.add_argument("--events", required=True)
    g.add_argument("--interval", type=int, default=10)
    g.add_argument("--segment-hours", type=int, default=1)
    g.add_argument("--locations", type=int)
    g.add_argument("--structure-out", help="write the tied chain structure JSON here")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_ingest)

    g = sub.add_parser("gen-mobility", help="synthetic event log from a planted chain")
    g.add_argument("--users", type=int, default=100)
    g.add_argument("--days", type=int, default=1)
    g.add_argument("--locations", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_mobility)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, DomainError, StructureError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"dpmrf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
