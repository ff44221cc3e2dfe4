"""Deterministic random streams.

All randomness flows through numpy Generators built from SeedSequence.
Streams are single-consumer: code that needs several independent sources
derives them explicitly with :func:`derive`, never by sharing a Generator.
Derivation is by integer path, so a sub-stream's output depends only on
(root_seed, path) and not on how many draws other streams have made.
"""

import numpy as np


def stream(seed):
    """Generator for a root seed (int or SeedSequence)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def derive(root_seed, *path):
    """Independent sub-stream identified by an integer path.

    ``derive(s, a, b)`` is reproducible from (s, a, b) alone, which is what
    makes runs extendable and replicates independently seedable.
    """
    if not all(isinstance(p, (int, np.integer)) and p >= 0 for p in path):
        raise ValueError("derivation path must be non-negative integers")
    ss = np.random.SeedSequence(root_seed, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


def subseed(root_seed, *path):
    """Integer seed derived from (root_seed, path); feeds nested derivations."""
    ss = np.random.SeedSequence(root_seed, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])
