from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def map_slices(fn, items, threads=1):
    """Ordered map over independent slices.

    Numba kernels release the GIL, so a thread pool gives real parallelism.
    Results come back in input order whatever the scheduling.
    """
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
