"""Keyed counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, *keys)`` through a
``SeedSequence``, so replica ``r`` of an experiment draws the same numbers
whether it runs alone or inside a batch of replicas.
"""

from __future__ import annotations

import os

import numpy as np

# stream tags, used as the last key so that different consumers never overlap
TAG_ADAM = 1
TAG_FIELD = 2
TAG_CHAIN = 3
TAG_AUX = 4
TAG_ROOT = 5
TAG_MOMENTS = 6


def stream(seed: int, *keys: int) -> np.random.Generator:
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seed and stream keys must be non-negative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def worker_count(tasks: int | None = None) -> int:
    """Thread budget from ``ADAMFIELD_THREADS`` (default: CPU count)."""
    raw = os.environ.get("ADAMFIELD_THREADS")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        n = os.cpu_count() or 1
    n = max(1, n)
    return min(n, tasks) if tasks else n
