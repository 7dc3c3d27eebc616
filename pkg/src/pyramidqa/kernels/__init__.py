"""Hot numeric kernels with switchable backends.

Two interchangeable implementations live side by side:

* :mod:`pyramidqa.kernels.numpy_impl` -- vectorized numpy (im2col + BLAS
  for convolution, argmax reductions for pooling).
* :mod:`pyramidqa.kernels.numba_impl` -- fused ``@njit`` loops.

The active backend is chosen once at import time from the environment
variable ``PYRAMIDQA_BACKEND`` (``"numba"`` or ``"numpy"``).  When the
variable is unset the numba backend is used if numba imports cleanly,
otherwise the package silently falls back to numpy.  ``set_backend`` is
exposed so tests and the benchmark script can switch at runtime.

Both backends implement the same four functions and agree to floating
point accumulation-order differences; ``benchmarks/backend_bench.py``
times them against each other and checks consistency.
"""

from __future__ import annotations

import os

from ..errors import ConfigError
from . import numpy_impl

try:
    from . import numba_impl

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba_impl = None
    HAS_NUMBA = False

_BACKENDS = {"numpy": numpy_impl}
if HAS_NUMBA:
    _BACKENDS["numba"] = numba_impl

_active_name = os.environ.get("PYRAMIDQA_BACKEND", "").strip().lower()
if not _active_name:
    _active_name = "numba" if HAS_NUMBA else "numpy"
if _active_name not in _BACKENDS:
    known = ", ".join(sorted(_BACKENDS))
    raise ConfigError(f"PYRAMIDQA_BACKEND={_active_name!r} is not one of: {known}")

_active = _BACKENDS[_active_name]


def backend_name() -> str:
    return _active_name


def set_backend(name: str) -> str:
    """Switch the active backend; returns the previous backend name."""
    global _active, _active_name
    if name not in _BACKENDS:
        known = ", ".join(sorted(_BACKENDS))
        raise ConfigError(f"unknown kernel backend {name!r}; available: {known}")
    previous = _active_name
    _active_name = name
    _active = _BACKENDS[name]
    return previous


def conv3d_fwd(xp, w, stride_t, stride_s):
    return _active.conv3d_fwd(xp, w, stride_t, stride_s)


def conv3d_bwd(xp, w, gout, stride_t, stride_s):
    return _active.conv3d_bwd(xp, w, gout, stride_t, stride_s)


def pool_max_fwd(x2):
    return _active.pool_max_fwd(x2)


def pool_max_bwd(gout, idx, window):
    return _active.pool_max_bwd(gout, idx, window)


def warmup() -> None:
    """Trigger JIT compilation of the active backend on toy shapes."""
    import numpy as np

    for dtype in (np.float32, np.float64):
        x = np.ones((1, 4, 4, 4, 2), dtype=dtype)
        w = np.ones((3, 3, 3, 2, 2), dtype=dtype)
        out = conv3d_fwd(x, w, 1, 1)
        conv3d_bwd(x, w, out, 1, 1)
        flat = np.arange(8, dtype=dtype).reshape(4, 2)
        vals, idx = pool_max_fwd(flat)
        pool_max_bwd(vals, idx, 2)
