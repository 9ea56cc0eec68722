"""Kernel backend selection.

Hot loops exist twice: as numba ``@njit`` kernels and as vectorised numpy
fallbacks. ``SYNAPSE_SSD_BACKEND=numpy`` forces the fallback; otherwise numba
is used when it imports.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

BACKENDS = ("numba", "numpy")
ENV_VAR = "SYNAPSE_SSD_BACKEND"


def njit(*args, **kwargs):
    """``numba.njit`` with cached, nogil defaults; identity decorator without numba."""
    opts = dict(cache=True, nogil=True)
    opts.update(kwargs)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    if args and callable(args[0]):
        return numba.njit(**opts)(args[0])
    return numba.njit(*args, **opts)


def default_backend():
    name = os.environ.get(ENV_VAR, "").strip().lower()
    if name in ("", "auto"):
        return "numba" if HAVE_NUMBA else "numpy"
    if name not in BACKENDS:
        raise ValueError(f"{ENV_VAR} must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ImportError("numba backend requested but numba is not importable")
    return name


def resolve(backend=None):
    return default_backend() if backend is None else _check(backend)


def _check(backend):
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    if backend == "numba" and not HAVE_NUMBA:
        raise ImportError("numba backend requested but numba is not importable")
    return backend


def worker_count():
    """Concurrent workers for PBS repetitions, from ``SYNAPSE_SSD_WORKERS``."""
    raw = os.environ.get("SYNAPSE_SSD_WORKERS", "")
    if raw.strip():
        return max(1, int(raw))
    return max(1, os.cpu_count() or 1)
