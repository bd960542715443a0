"""Backend selection for the per-observation kernels.

The compiled extension is used when it imports; set ``AVLM_PURE_PYTHON=1`` to
force the pure-Python fallback (useful for debugging and for the benchmark).
"""

import os

BACKEND = "python"

if os.environ.get("AVLM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from avlm._kernel import accumulate, trace  # noqa: F401

        BACKEND = "cython"
    except ImportError:  # extension not built
        pass

if BACKEND == "python":
    from avlm._kernel_py import accumulate, trace  # noqa: F401

__all__ = ["BACKEND", "accumulate", "trace"]
