"""Numba dispatch for the hot rasterizer loops.

Set ``STYLESPLAT_DISABLE_NUMBA=1`` to force the vectorized numpy path.  The
kernels module consults :data:`USE_NUMBA` at call time, so tests can also flip
it per call through the ``backend`` argument of the rasterizer.
"""
import os
import warnings

_DISABLED = os.environ.get("STYLESPLAT_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

# numba probes for a TBB threading layer and warns when the system copy is old
warnings.filterwarnings("ignore", message="The TBB threading layer")

try:
    import numba
    from numba import njit, prange
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAS_NUMBA = False
    numba = None

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn

    prange = range

USE_NUMBA = HAS_NUMBA and not _DISABLED


def resolve_backend(backend=None):
    """Return ``"numba"`` or ``"numpy"`` for an optional explicit request."""
    if backend is None:
        return "numba" if USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def set_num_threads(n):
    if HAS_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
