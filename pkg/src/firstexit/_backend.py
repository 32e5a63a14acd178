"""
Kernel backend selection.

Hot loops are compiled with numba when it is importable and the environment
variable ``FIRSTEXIT_BACKEND`` is unset or ``numba``.  Setting it to ``numpy``
routes every dispatcher to the vectorized numpy implementations instead; the
numba kernels are then left as plain (uncompiled) Python functions.
"""
import os
import warnings

BACKEND_ENV = "FIRSTEXIT_BACKEND"

_requested = os.environ.get(BACKEND_ENV, "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {_requested!r}")

# prefer OpenMP: the TBB layer refuses older system TBB builds with a warning
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    if _requested == "numba":
        warnings.warn("numba is not installed - falling back to numpy kernels")

USE_NUMBA = HAVE_NUMBA and _requested == "numba"

if not USE_NUMBA:
    # leave kernels as plain Python; dispatchers route to the numpy twins
    prange = range

    def njit(*args, **kw):
        if len(args) == 1 and callable(args[0]) and not kw:
            return args[0]
        return lambda f: f


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n):
    """Set the numba worker pool size; a no-op on the numpy backend.

    Results never depend on the thread count: every kernel draws from
    per-scenario random substreams.
    """
    if n is None or not HAVE_NUMBA:
        return
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
