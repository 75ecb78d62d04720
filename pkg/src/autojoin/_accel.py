"""Backend selection for the hot kernels.

``AUTOJOIN_BACKEND=numpy`` forces the pure-numpy path. Anything else (or an
unset variable) uses numba when it imports cleanly.
"""

import os

BACKEND_ENV = "AUTOJOIN_BACKEND"

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep in practice
    HAS_NUMBA = False


def requested_backend() -> str:
    value = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if value not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {value!r}")
    return value


def active_backend() -> str:
    if requested_backend() == "numba" and HAS_NUMBA:
        return "numba"
    return "numpy"


_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator():
    """Keep freed large blocks in the glibc heap instead of returning them to the OS.

    im2col/col2im allocate tens of megabytes per layer per step; without this
    every allocation is a fresh mmap and the page faults cost more than the
    copy. A no-op off glibc. Returns True when the setting was applied.
    """
    import ctypes
    import ctypes.util
    import sys

    if not sys.platform.startswith("linux") or os.environ.get("AUTOJOIN_NO_MALLOPT"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 512 << 20) == 1
        return libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30) == 1 and ok
    except (OSError, AttributeError):
        return False
