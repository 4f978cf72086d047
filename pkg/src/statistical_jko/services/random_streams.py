"""
Seeded random streams.

Counter-based Philox generators with named substreams: a (seed, key...) pair
always yields the same stream, and distinct keys yield independent streams.
Replication r of batch b uses key (b, r); paths that are not batched use
(0, r).
"""

from typing import Tuple

import numpy as np

SEED_MASK = (1 << 64) - 1


def normalize_seed(seed: int) -> int:
    """Seeds are unsigned 64-bit integers."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return int(seed) & SEED_MASK


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the substream `key` of `seed`."""
    sequence = np.random.SeedSequence(normalize_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def replication_streams(seed: int, count: int, batch: int = 0) -> Tuple[np.random.Generator, ...]:
    return tuple(substream(seed, batch, r) for r in range(count))


def derive_seed(seed: int, *key: int) -> int:
    """A child seed, for components that take integer seeds rather than generators."""
    sequence = np.random.SeedSequence(normalize_seed(seed), spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
