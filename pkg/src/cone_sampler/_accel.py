"""Backend selection for the hot kernels.

``CONE_SAMPLER_BACKEND`` picks the implementation at import time:
``numba`` (default when numba is importable) or ``numpy``.
``CONE_SAMPLER_THREADS`` caps worker parallelism; unset means auto.
"""
import os

_THREADS_ENV = "CONE_SAMPLER_THREADS"
_BACKEND_ENV = "CONE_SAMPLER_BACKEND"


def thread_cap():
    """Worker cap from the environment, or None for auto."""
    raw = os.environ.get(_THREADS_ENV, "").strip()
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{_THREADS_ENV} must be a positive integer, got {raw!r}")
    if n < 1:
        raise ValueError(f"{_THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


# numba sizes its pool once, at first import; make room for the requested cap
# even on machines with fewer cores so the thread count is really exercised.
_cap = thread_cap()
if _cap is not None and "NUMBA_NUM_THREADS" not in os.environ:
    os.environ["NUMBA_NUM_THREADS"] = str(_cap)

try:
    import numba
    HAS_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the system TBB is often too old and warns on every first launch
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None
    HAS_NUMBA = False


def _resolve_backend():
    requested = os.environ.get(_BACKEND_ENV, "").strip().lower()
    if requested in ("", "auto"):
        return "numba" if HAS_NUMBA else "numpy"
    if requested not in ("numba", "numpy"):
        raise ValueError(f"{_BACKEND_ENV} must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and not HAS_NUMBA:
        raise ImportError(f"{_BACKEND_ENV}=numba but numba is not installed")
    return requested


BACKEND = _resolve_backend()

if HAS_NUMBA and _cap is not None:
    numba.set_num_threads(min(_cap, numba.config.NUMBA_NUM_THREADS))


def njit(**kwargs):
    """``numba.njit`` with caching, or a no-op decorator without numba."""
    if not HAS_NUMBA:
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return numba.njit(**kwargs)


if HAS_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range
