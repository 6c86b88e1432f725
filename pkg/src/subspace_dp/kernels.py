"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``SUBSPACE_DP_PURE_PYTHON=1`` is set, the numpy fallback
is used. ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("SUBSPACE_DP_PURE_PYTHON") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"
    else:
        BACKEND = "cython"


def available_backends():
    """Map backend name to kernel module for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out


def pairwise_max_distance(points, p, backend=None):
    """Max l_p distance between rows of ``points`` (d x n)."""
    impl = available_backends()[backend] if backend else _impl
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.shape[0] < 2:
        return 0.0
    return float(impl.pairwise_max_distance(pts, int(p)))


def khachiyan_sweep(P, u, Xinv, M, tol, max_steps, backend=None):
    impl = available_backends()[backend] if backend else _impl
    return impl.khachiyan_sweep(P, u, Xinv, M, float(tol), int(max_steps))
