"""Kernel dispatch: the Cython extension when built, NumPy otherwise.

Set ``RPCSIM_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("RPCSIM_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def first_ultrametric_violation(d, tol=0.0):
    """First triple ``(i, j, k)`` with ``d[i, j] > max(d[i, k], d[k, j]) + tol``, or None."""
    return _impl.first_ultrametric_violation(np.ascontiguousarray(d, dtype=np.float64), float(tol))


def max_ultrametric_excess(d):
    return float(_impl.max_ultrametric_excess(np.ascontiguousarray(d, dtype=np.float64)))


def record_merges(old_block, new_block, tau, u):
    """Stamp ``tau[i, j] = u`` for pairs that were apart in ``old_block`` and share ``new_block``."""
    return _impl.record_merges(
        np.ascontiguousarray(old_block, dtype=np.int64),
        np.ascontiguousarray(new_block, dtype=np.int64),
        tau,
        float(u),
    )


def shared_depth(paths):
    """Length of the common prefix of every pair of rows of an integer path array."""
    return _impl.shared_depth(np.ascontiguousarray(paths, dtype=np.int64))
