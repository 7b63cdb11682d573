"""Numba switch.

Kernels are compiled with ``numba.njit`` when numba imports and the
``UGSV_NUMBA`` environment variable is not ``0``. Otherwise the pure-numpy
versions are used. The flag is read once at import time.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

ENV_FLAG = "UGSV_NUMBA"

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get(ENV_FLAG, "1").strip().lower() not in ("0", "false", "no", "off")


def njit(func):
    """Compile ``func`` with numba if available, else return ``None``."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(func)


def pick(numba_impl, numpy_impl):
    return numba_impl if (USE_NUMBA and numba_impl is not None) else numpy_impl
