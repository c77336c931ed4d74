"""Deterministic replica streams and a replica-parallel map.

Every replica draws from its own ``numpy.random.Generator`` seeded by
``SeedSequence(master_seed, spawn_key=(stream, replica))``. The stream id is a
stable hash of a label, so results depend only on (master seed, label,
replica index) and never on the worker count.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Sequence

import numpy as np

SEED_SCHEME = "numpy-seedsequence-spawnkey/v1"


def stream_id(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def replica_rng(master_seed: int, label: str, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(stream_id(label), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(seed) -> np.random.Generator:
    """Accept an int, a SeedSequence, a Generator or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def default_workers() -> int:
    return os.cpu_count() or 1


def _run_chunk(func, args, master_seed, label, indices):
    return [func(replica_rng(master_seed, label, i), *args) for i in indices]


def replica_map(
    func: Callable[..., Any],
    replicas: int,
    master_seed: int,
    label: str,
    args: Sequence[Any] = (),
    workers: int = 1,
) -> list:
    """Evaluate ``func(rng_i, *args)`` for ``i < replicas``, returned in replica order."""
    indices = list(range(replicas))
    if workers <= 1 or replicas < 2:
        return _run_chunk(func, tuple(args), master_seed, label, indices)
    n_chunks = min(replicas, workers * 4)
    chunks = [indices[c::n_chunks] for c in range(n_chunks)]
    out: list = [None] * replicas
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_run_chunk, func, tuple(args), master_seed, label, chunk) for chunk in chunks
        ]
        for chunk, fut in zip(chunks, futures):
            for i, res in zip(chunk, fut.result()):
                out[i] = res
    return out
