"""Order-preserving thread pool capped by ``EQUIBURST_THREADS``."""

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count(default=1):
    raw = os.environ.get("EQUIBURST_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return default
    return max(1, n)


def ordered_map(fn, items, threads=None):
    """``[fn(x) for x in items]``, possibly on worker threads; result order is input order."""
    items = list(items)
    n = thread_count() if threads is None else max(1, int(threads))
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
