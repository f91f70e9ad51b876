"""glibc malloc tuning for large transient workspaces.

Conv/im2col buffers are tens of MB and die within a single op.  With the
default mmap threshold glibc hands them back to the kernel on free, so every
op pays the page-fault cost again (~30 ms per 37 MB on a virtualized host).
Raising the trim/mmap thresholds keeps those pages on the heap.
"""

import ctypes

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune():
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
    except OSError:
        return False
    ok = libc.mallopt(_M_TRIM_THRESHOLD, ctypes.c_int(2**31 - 1))
    ok &= libc.mallopt(_M_MMAP_THRESHOLD, ctypes.c_int(2**31 - 1))
    return bool(ok)
