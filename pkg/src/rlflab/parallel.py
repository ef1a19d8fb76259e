"""Block-seeded random streams and an order-preserving thread map.

Particles are processed in fixed-size blocks, each with its own Philox
stream derived from ``(seed, block index)``.  Results therefore depend only
on the seed and the particle count, never on the number of worker threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK = 4096
_threads = 1


def set_threads(n):
    global _threads
    _threads = max(1, int(n))


def get_threads():
    return _threads


def block_rng(seed, index):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def blocks(n, block=BLOCK):
    return [slice(s, min(s + block, n)) for s in range(0, n, block)]


def map_blocks(fn, n, seed, block=BLOCK, threads=None):
    """``[fn(slice_i, rng_i) for each block]`` in block order."""
    threads = _threads if threads is None else max(1, int(threads))
    jobs = [(sl, block_rng(seed, i)) for i, sl in enumerate(blocks(n, block))]
    if threads == 1 or len(jobs) <= 1:
        return [fn(sl, rng) for sl, rng in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
