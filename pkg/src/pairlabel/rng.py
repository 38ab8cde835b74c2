"""Seeded random streams.

Every source of randomness in the package (weight init, dropout, splits,
synthetic data, batch shuffling) draws from a named substream of one root
seed, so any component can be reproduced in isolation.
"""

import hashlib

import numpy as np


def _name_digest(name: str) -> int:
    # Stable across processes and platforms, unlike hash().
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")


def seed_stream(root_seed: int, name: str) -> np.random.Generator:
    """Return a Generator for the substream `name` under `root_seed`."""
    seq = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, _name_digest(name)])
    return np.random.default_rng(seq)


def substream_seed(root_seed: int, name: str) -> int:
    """Derive a child integer seed (for components that take seeds, not rngs)."""
    seq = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, _name_digest(name)])
    return int(seq.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFF)
