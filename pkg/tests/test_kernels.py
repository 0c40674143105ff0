"""The compiled and numpy kernels must agree; the numpy one is selected when forced."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpmrf import _kernels_py, kernels
from dpmrf.experiments.synthetic import gen_potentials, gen_structure
from dpmrf.inference import BPConfig, loopy_bp

compiled = pytest.importorskip("dpmrf._kernels", reason="compiled extension not built")


@pytest.mark.filterwarnings("ignore::dpmrf.inference.ConvergenceWarning")
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 8), st.integers(2, 4))
def test_lbp_backends_agree(seed, T, card):
    rng = np.random.default_rng(seed)
    s = gen_structure("er", T, card, rng, edge_prob=0.5)
    theta = gen_potentials(s, rng)
    cfg = BPConfig(damping=0.5, tol=1e-12, max_iters=60)
    original = kernels.lbp_pairwise
    try:
        kernels.lbp_pairwise = _kernels_py.lbp_pairwise
        a = loopy_bp(theta, s, cfg)
        kernels.lbp_pairwise = compiled.lbp_pairwise
        b = loopy_bp(theta, s, cfg)
    finally:
        kernels.lbp_pairwise = original
    assert a.iterations == b.iterations
    assert np.abs(a.marginals.values - b.marginals.values).max() < 1e-12
    assert a.log_partition == pytest.approx(b.log_partition, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.integers(1, 4), st.floats(0.1, 10))
def test_projection_backends_agree(vals, blocks, total):
    v = np.tile(np.asarray(vals, dtype=float), blocks)
    offs = np.arange(0, v.size + 1, len(vals), dtype=np.int64)
    a = _kernels_py.project_simplex_blocks(v.copy(), offs, total)
    b = compiled.project_simplex_blocks(v.copy(), offs, total)
    assert np.abs(a - b).max() < 1e-12


def test_fallback_is_selected_when_forced():
    env = dict(os.environ, DPMRF_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import dpmrf; print(dpmrf.KERNEL_BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND == "cython"
