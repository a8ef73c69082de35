"""Hot loops: stratified contingency reduction, EM accumulation, CPT sampling.

Every kernel exists twice with the same signature: a numba ``@njit`` version
in :mod:`._jit` and a vectorised numpy version in :mod:`._reference`.  The
numba path is used when numba imports cleanly, unless the environment variable
``LATENTREPAIR_DISABLE_NUMBA`` is set to ``1``/``true``/``yes``.

The two paths agree up to floating-point summation order; each is
deterministic on its own.
"""
from __future__ import annotations

import os

from . import _reference

_DISABLED = os.environ.get("LATENTREPAIR_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("disabled by LATENTREPAIR_DISABLE_NUMBA")
    from . import _jit
except ImportError:
    _jit = None

USE_NUMBA = _jit is not None
BACKEND = "numba" if USE_NUMBA else "numpy"
_impl = _jit if USE_NUMBA else _reference

stratum_terms = _impl.stratum_terms
weighted_bincount = _impl.weighted_bincount
posterior_loglik = _impl.posterior_loglik
sample_grouped = _impl.sample_grouped

__all__ = [
    "BACKEND",
    "USE_NUMBA",
    "stratum_terms",
    "weighted_bincount",
    "posterior_loglik",
    "sample_grouped",
]
