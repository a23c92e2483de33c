"""
seeding.py
One master seed fans out into named, independent substreams.

Every generator is a numpy Philox (counter-based) generator seeded through a
SeedSequence whose spawn key is (stream id, *keys). The same (seed, name, keys)
always yields the same stream, whatever the worker or the order of calls.
"""
from __future__ import annotations

import numpy as np

# Stream ids are part of the on-disk reproducibility contract: never renumber.
STREAMS = {
    "data": 1,
    "matrices": 2,
    "search": 3,
    "grid": 4,
    "noise": 5,
    "sync": 6,
    "init": 7,
    "sweep": 8,
}


def generator(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for a plain integer seed plus an optional spawn key."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def substream(master_seed: int, name: str, *keys: int) -> np.random.Generator:
    if name not in STREAMS:
        raise ValueError(f"Unknown seed stream: {name}")
    return generator(master_seed, STREAMS[name], *keys)


def derive_seed(master_seed: int, name: str, *keys: int) -> int:
    """A 63-bit integer seed drawn from a named substream (stored in artifacts)."""
    return int(substream(master_seed, name, *keys).integers(0, 2**63 - 1))
