"""Seed-keyed worker pools capped by ``GZIM_THREADS``."""
import os
from concurrent.futures import ProcessPoolExecutor


def worker_count() -> int:
    raw = os.environ.get("GZIM_THREADS", "").strip()
    cap = int(raw) if raw.isdigit() and int(raw) > 0 else (os.cpu_count() or 1)
    return max(1, min(cap, os.cpu_count() or 1))


def parallel_map(fn, items):
    """``list(map(fn, items))``, fanned out over processes when more than one worker is allowed.

    Results come back in input order, so aggregation does not depend on scheduling.
    """
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
