"""Hot kernels: compiled Cython module when built, numpy fallback otherwise.

Set ``DPMRF_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("DPMRF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

lbp_pairwise = _impl.lbp_pairwise
project_simplex_blocks = _impl.project_simplex_blocks

__all__ = ["BACKEND", "lbp_pairwise", "project_simplex_blocks"]
