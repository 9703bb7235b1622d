"""Kernel backend selection.

The compiled ``_kernels`` extension is used when importable. Setting
``CONTRAMATCH_PURE_PYTHON=1`` forces the pure-Python fallback.
"""
import os

if os.environ.get("CONTRAMATCH_PURE_PYTHON", "") not in ("", "0"):
    from ._fallback import (connected_components, fnv1a_64, hash_tokens, mean_pool,
                            scatter_mean_grad)
    BACKEND = "python"
else:
    try:
        from ._kernels import (connected_components, fnv1a_64, hash_tokens, mean_pool,
                               scatter_mean_grad)
        BACKEND = "cython"
    except ImportError:
        from ._fallback import (connected_components, fnv1a_64, hash_tokens, mean_pool,
                                scatter_mean_grad)
        BACKEND = "python"

__all__ = [
    "BACKEND",
    "connected_components",
    "fnv1a_64",
    "hash_tokens",
    "mean_pool",
    "scatter_mean_grad",
]
