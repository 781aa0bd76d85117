"""Process-level runtime knobs shared by the trainer and CLI."""

from __future__ import annotations

import ctypes
import os

_TUNED = False


def tune_allocator() -> None:
    """Raise glibc's mmap/trim thresholds once per process.

    Training keeps many multi-megabyte activation buffers alive across a
    step; with default thresholds glibc serves them via mmap and returns
    them to the kernel on free, so every step pays page faults. Set
    HCVP_NO_MALLOC_TUNING=1 to skip.
    """
    global _TUNED
    if _TUNED or os.environ.get("HCVP_NO_MALLOC_TUNING"):
        return
    _TUNED = True
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 64 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 32 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except OSError:  # non-glibc platform; harmless to skip
        pass


def limit_blas_threads(n: int = 1):
    """Pin BLAS pools so results do not depend on ambient thread counts.

    Returns the threadpoolctl controller context manager.
    """
    import threadpoolctl

    return threadpoolctl.threadpool_limits(limits=n)
