"""Keyed, counter-based random number streams.

Every random draw in this package is a pure function of a root seed plus a
few integer key parts (a purpose tag, and e.g. sweep/item indices), so
results never depend on execution order or scheduling.  Streams are Philox
counter-based generators; the vector position within a draw acts as the
counter (e.g. the subject index inside a Gibbs step).
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# purpose tags, one per independent stream family
TAG_Q = 1
TAG_TRUTH = 2
TAG_GIBBS_INIT = 3
TAG_GIBBS_STEP = 4
TAG_GIBBS_ORDER = 5
TAG_BOOT_ALPHA = 6
TAG_BOOT_GIBBS = 7
TAG_REPLICATION = 8


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *parts: int) -> int:
    """Hash (seed, *parts) into a new 64-bit seed."""
    h = _splitmix64(int(seed) & _MASK64)
    for p in parts:
        h = _splitmix64(h ^ _splitmix64(int(p) & _MASK64))
    return h


def keyed_rng(seed: int, *parts: int) -> np.random.Generator:
    """Philox generator whose stream is a pure function of (seed, *parts)."""
    h = derive_seed(seed, *parts)
    key = np.array([h, _splitmix64(h ^ 0xA5A5A5A5A5A5A5A5)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
