import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import enumerate_model, random_decomposable
from dpmrf.distribution import kl_divergence, log_partition, model_marginals, sample, sample_counts
from dpmrf.experiments.synthetic import gen_potentials, gen_structure
from dpmrf.inference import (
    BPConfig,
    ConvergenceWarning,
    ExactEngine,
    LoopyEngine,
    cgm_entropy,
    loopy_bp,
    make_engine,
    sum_product_exact,
)
from dpmrf.junction_tree import build_junction_tree
from dpmrf.model import CliqueTableSet, DomainSpec, ModelStructure, StructureError, margin, shared_margin_gap, sufficient_statistics


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_exact_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    s = random_decomposable(rng)
    theta = rng.normal(scale=1.5, size=s.dim)
    res = sum_product_exact(theta, build_junction_tree(s))
    log_z, mu, _, _ = enumerate_model(theta, s)
    assert res.exact and res.converged
    assert res.log_partition == pytest.approx(log_z, abs=1e-10)
    assert np.abs(res.marginals.values - mu).max() < 1e-10


def test_uniform_parameters_give_uniform_marginals():
    s = gen_structure("chain", 5, 3, order=2)
    res = sum_product_exact(np.zeros(s.dim), build_junction_tree(s))
    assert np.allclose(res.marginals.values, 1 / 9)
    assert res.log_partition == pytest.approx(5 * np.log(3))


def test_calibration_identity(rng):
    s = gen_structure("chain", 6, 3, order=2)
    jt = build_junction_tree(s)
    res = sum_product_exact(rng.normal(size=s.dim), jt)
    for a, b in jt.edges:
        sep = jt.separator(a, b)
        ma = margin(res.tree_beliefs[a], jt.tree_cliques[a], sep)
        mb = margin(res.tree_beliefs[b], jt.tree_cliques[b], sep)
        assert np.allclose(ma, mb, atol=1e-12)
    assert shared_margin_gap(res.marginals) < 1e-12


def test_log_partition_shift_invariance(rng):
    s = gen_structure("chain", 5, 3, order=2)
    jt = build_junction_tree(s)
    theta = rng.normal(size=s.dim)
    shifted = theta.copy()
    shifted[s.block(2)] += 0.7
    assert log_partition(shifted, jt) == pytest.approx(log_partition(theta, jt) + 0.7, abs=1e-12)
    assert kl_divergence(theta, shifted, jt) < 1e-10


def test_kl_is_nonnegative_and_zero_on_self(rng):
    s = gen_structure("chain", 4, 3, order=1)
    jt = build_junction_tree(s)
    a, b = rng.normal(size=s.dim), rng.normal(size=s.dim)
    assert kl_divergence(a, a, jt) == pytest.approx(0, abs=1e-12)
    assert kl_divergence(a, b, jt) > 0
    _, _, _, p = enumerate_model(a, s)
    _, _, _, q = enumerate_model(b, s)
    assert kl_divergence(a, b, jt) == pytest.approx(float(np.sum(p * np.log(p / q))), rel=1e-9)
    with pytest.raises(StructureError):
        kl_divergence(a, b, None)


@pytest.mark.parametrize("kind", ["chain", "er-tree"])
def test_loopy_is_exact_on_trees(kind, rng):
    if kind == "chain":
        s = ModelStructure(DomainSpec((2, 3, 4, 3)), ((0,), (0, 1), (1, 2), (2, 3), (3,)))
    else:
        s = ModelStructure.pairwise(DomainSpec.uniform(5, 3), [(0, 1), (0, 2), (2, 3), (2, 4)])
    theta = rng.normal(size=s.dim)
    res = loopy_bp(theta, s, BPConfig(damping=1.0, tol=1e-13, max_iters=200))
    exact = sum_product_exact(theta, build_junction_tree(s))
    assert res.converged and not res.exact
    assert np.abs(res.marginals.values - exact.marginals.values).max() < 1e-10
    assert res.log_partition == pytest.approx(exact.log_partition, abs=1e-9)


def test_loopy_generic_factors_on_tree(rng):
    s = ModelStructure(DomainSpec.uniform(4, 2), ((0, 1, 2), (2, 3)))
    theta = rng.normal(size=s.dim)
    res = loopy_bp(theta, s, BPConfig(damping=1.0, tol=1e-13, max_iters=200))
    log_z, mu, _, _ = enumerate_model(theta, s)
    assert np.abs(res.marginals.values - mu).max() < 1e-10
    assert res.log_partition == pytest.approx(log_z, abs=1e-9)


def test_loopy_on_a_cycle_is_close(rng):
    s = ModelStructure.pairwise(DomainSpec.uniform(4, 2), [(0, 1), (1, 2), (2, 3), (0, 3)])
    theta = 0.3 * rng.normal(size=s.dim)
    res = loopy_bp(theta, s, BPConfig(damping=0.5, tol=1e-12, max_iters=1000))
    log_z, mu, _, _ = enumerate_model(theta, s)
    assert res.converged
    assert np.abs(res.marginals.values - mu).max() < 0.02
    assert abs(res.log_partition - log_z) < 0.02


def test_unconverged_loopy_warns():
    s = ModelStructure.pairwise(DomainSpec.uniform(3, 2), [(0, 1), (1, 2), (0, 2)])
    theta = np.random.default_rng(0).normal(scale=3.0, size=s.dim)
    with pytest.warns(ConvergenceWarning):
        res = loopy_bp(theta, s, BPConfig(damping=1.0, tol=1e-15, max_iters=2))
    assert not res.converged
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        LoopyEngine(s, BPConfig(damping=1.0, tol=1e-15, max_iters=2)).run(theta)
    with pytest.warns(ConvergenceWarning):
        model_marginals(theta, LoopyEngine(s, BPConfig(damping=1.0, tol=1e-15, max_iters=2)))


def test_bp_result_serializes(rng):
    s = gen_structure("chain", 3, 2, order=1)
    d = sum_product_exact(rng.normal(size=s.dim), build_junction_tree(s)).to_dict()
    assert set(d) >= {"marginals", "log_partition", "converged", "residual", "iterations"}
    json.dumps(d)


def test_make_engine_picks_exact_when_possible():
    assert isinstance(make_engine(gen_structure("chain", 5, 2)), ExactEngine)
    cyc = ModelStructure.pairwise(DomainSpec.uniform(4, 2), [(0, 1), (1, 2), (2, 3), (0, 3)])
    assert isinstance(make_engine(cyc), LoopyEngine)


def test_bp_config_validation():
    with pytest.raises(ValueError):
        BPConfig(damping=0.0)
    with pytest.raises(ValueError):
        BPConfig(tol=-1)


def test_cgm_entropy_uniform_chain():
    s = ModelStructure.pairwise(DomainSpec.uniform(3, 2), [(0, 1), (1, 2)])
    n = CliqueTableSet(s, np.full(8, 2.0), "counts")
    assert cgm_entropy(n, build_junction_tree(s)) == pytest.approx(8 * 3 * np.log(2))


def test_cgm_entropy_matches_joint_entropy(rng):
    """On a decomposable model the decomposition equals N times the joint entropy."""
    s = gen_structure("chain", 4, 3, order=2)
    jt = build_junction_tree(s)
    s_max = ModelStructure(s.domain, jt.tree_cliques)
    theta = rng.normal(size=s_max.dim)
    _, mu, _, p = enumerate_model(theta, s_max)
    n = CliqueTableSet(s_max, 100 * mu, "counts")
    h = -np.sum(p * np.log(p))
    assert cgm_entropy(n, build_junction_tree(s_max)) == pytest.approx(100 * h, rel=1e-10)


def test_cgm_entropy_needs_clique_tables():
    s = gen_structure("chain", 5, 2, order=3)
    n = CliqueTableSet(s, np.full(s.dim, 2.5), "counts")
    with pytest.raises(StructureError):
        cgm_entropy(n, build_junction_tree(s))


def test_sampling_converges(rng):
    s = gen_structure("chain", 5, 3, order=2)
    jt = build_junction_tree(s)
    theta = gen_potentials(s, rng)
    mu = sum_product_exact(theta, jt).marginals.values
    errs = []
    for N in (1000, 16000):
        data = sample(theta, N, jt, rng)
        errs.append(np.abs(sufficient_statistics(data, s).values / N - mu).max())
    # error shrinks roughly like 1/sqrt(N): a 16x larger sample should cut it well below half
    assert errs[1] < 0.5 * errs[0]
    assert errs[1] < 4 * np.sqrt(0.25 / 16000)


def test_count_sampler_moments(rng):
    s = gen_structure("chain", 5, 3, order=2)
    jt = build_junction_tree(s)
    theta = gen_potentials(s, rng)
    calib = sum_product_exact(theta, jt)
    mu = calib.marginals.values
    R, N = 3000, 50
    draws = np.array([sample_counts(theta, N, jt, rng, calibrated=calib).values for _ in range(R)])
    assert np.all(draws.sum(axis=1) == N * s.num_cliques)
    se = np.sqrt(N * mu * (1 - mu) / R) + 1e-12
    assert np.abs(draws.mean(axis=0) - N * mu).max() / se.max() < 5
    busy = mu > 0.05
    var_ratio = draws.var(axis=0)[busy] / (N * mu * (1 - mu))[busy]
    assert np.abs(var_ratio - 1).max() < 0.15
    CliqueTableSet(s, draws[0], "counts").check()
