"""Glibc allocator tuning for large-array churn.

Training allocates and frees many multi-megabyte buffers per step; with the
default mmap threshold each one round-trips through mmap/munmap and pays
fresh page faults every step. Raising the threshold keeps those buffers on
the heap free list, so pages are faulted once and reused. No-op on platforms
without glibc mallopt; set MFQAT_NO_MALLOC_TUNING=1 to opt out.
"""

from __future__ import annotations

import ctypes
import os

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_malloc() -> bool:
    if os.environ.get("MFQAT_NO_MALLOC_TUNING"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30) == 1
        ok = libc.mallopt(_M_TRIM_THRESHOLD, -1) == 1 and ok
        return ok
    except (OSError, AttributeError):
        return False
