"""Compiled vs numpy kernels: loopy BP and blockwise simplex projection.

    python3 benchmarks/bench_kernels.py [--repeats 5]

Both backends run on identical inputs; the script also reports the largest
disagreement between their outputs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from dpmrf import _kernels_py, kernels
from dpmrf.experiments.synthetic import gen_potentials, gen_structure
from dpmrf.inference import BPConfig, loopy_bp

try:
    from dpmrf import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def _time(fn, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_bp(impl, structure, theta, cfg, repeats):
    kernels.lbp_pairwise = impl.lbp_pairwise
    return _time(lambda: loopy_bp(theta, structure, cfg), repeats)


def bench_projection(impl, values, offsets, repeats):
    return _time(lambda: impl.project_simplex_blocks(values, offsets, 1.0), repeats)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args()
    if _kernels_c is None:
        print("compiled extension not built; only the numpy backend is available")
        return
    rng = np.random.default_rng(0)
    cfg = BPConfig(damping=0.5, tol=1e-10, max_iters=200)
    cases = [
        ("chain T=10 |X|=5", gen_structure("chain", 10, 5, order=3)),
        ("ER T=20 |X|=5 p=0.3", gen_structure("er", 20, 5, rng, edge_prob=0.3)),
        ("ER T=30 |X|=10 p=0.2", gen_structure("er", 30, 10, rng, edge_prob=0.2)),
    ]
    original = kernels.lbp_pairwise
    print(f"{'case':28s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s} {'max diff':>9s}")
    try:
        for name, s in cases:
            theta = gen_potentials(s, rng)
            t_py, r_py = bench_bp(_kernels_py, s, theta, cfg, args.repeats)
            t_c, r_c = bench_bp(_kernels_c, s, theta, cfg, args.repeats)
            diff = float(np.abs(r_py.marginals.values - r_c.marginals.values).max())
            print(f"BP {name:25s} {1e3 * t_py:11.2f} {1e3 * t_c:12.2f} {t_py / t_c:8.1f} {diff:9.1e}")
    finally:
        kernels.lbp_pairwise = original
    for blocks, size in [(24, 25), (200, 400)]:
        vals = rng.normal(scale=0.1, size=blocks * size) + 1.0 / size
        offs = np.arange(0, blocks * size + 1, size, dtype=np.int64)
        t_py, o_py = bench_projection(_kernels_py, vals, offs, args.repeats)
        t_c, o_c = bench_projection(_kernels_c, vals, offs, args.repeats)
        diff = float(np.abs(o_py - o_c).max())
        label = f"projection {blocks}x{size}"
        print(f"{label:28s} {1e3 * t_py:11.2f} {1e3 * t_c:12.2f} {t_py / t_c:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
