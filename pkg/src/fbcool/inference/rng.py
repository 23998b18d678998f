"""Seedable, splittable random streams backed by the Philox counter-based generator."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for ``(seed, stream)``; distinct streams never overlap."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def spawn(seed: int, n: int) -> list[np.random.Generator]:
    return [make_rng(seed, i) for i in range(n)]


def monte_carlo(func, n: int, seed: int, threads: int = 1) -> list:
    """Run ``func(rng, index)`` for ``n`` independent streams; results keep index order."""
    rngs = spawn(seed, n)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(func, rngs, range(n)))
    return [func(rng, i) for i, rng in enumerate(rngs)]
