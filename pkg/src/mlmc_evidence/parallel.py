"""Order-preserving thread-pool map.

Work items carry their own derived random streams, so the result of
`parallel_map` is identical for any worker count; threads only change
wall time.
"""

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "MLMC_EVIDENCE_THREADS"


def resolve_threads(threads=None) -> int:
    """Worker count from the argument, the environment, or the CPU count."""
    if threads is None:
        env = os.environ.get(ENV_THREADS)
        if env:
            threads = int(env)
    if threads is None:
        threads = os.cpu_count() or 1
    return max(1, int(threads))


def parallel_map(fn, items, threads=None):
    """Apply `fn` to each item, returning results in input order."""
    threads = resolve_threads(threads)
    items = list(items)
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
