"""Seed derivation.

Every stochastic step draws from a stream derived from one root seed and a
path of keys, e.g. ``derive_seed(root, "print", template_id, class_id)``.
String keys are hashed with CRC32 so the tree is stable across runs and
platforms.
"""

import zlib

import numpy as np


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError(f"seed keys must be non-negative, got {k}")
    return k


def seed_sequence(root, *keys):
    return np.random.SeedSequence(int(root), spawn_key=tuple(_key(k) for k in keys))


def derive_seed(root, *keys):
    """Return a 63-bit integer seed for the stream at ``root/keys``."""
    return int(seed_sequence(root, *keys).generate_state(1, dtype=np.uint64)[0]) >> 1


def rng(root, *keys):
    return np.random.default_rng(seed_sequence(root, *keys))
