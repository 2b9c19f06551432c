"""Worker-count control for row-chunked rendering.

PROG3D_THREADS caps the number of worker threads used by render_view and
render_view_adjoint. Work is split into contiguous pixel-row chunks and the
per-chunk results are merged in chunk order, so outputs are deterministic for
a fixed thread setting.
"""

import os
from concurrent.futures import ThreadPoolExecutor

_ENV_VAR = "PROG3D_THREADS"


def worker_count() -> int:
    """Number of worker threads, from PROG3D_THREADS (default 1, floor 1)."""
    raw = os.environ.get(_ENV_VAR, "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def row_chunks(n_rows: int, n_workers: int):
    """Split range(n_rows) into at most n_workers contiguous slices."""
    n_workers = min(max(1, n_workers), n_rows) if n_rows > 0 else 1
    step = (n_rows + n_workers - 1) // n_workers
    return [slice(lo, min(lo + step, n_rows)) for lo in range(0, n_rows, step)]


def map_chunks(fn, slices):
    """Apply fn to each slice, in parallel when more than one worker is allowed.

    Results come back in slice order regardless of completion order.
    """
    if len(slices) == 1 or worker_count() == 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(fn, slices))
