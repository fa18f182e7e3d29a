"""Deterministic random streams.

A scenario's ``master_seed`` is split into independent streams, one per
logical consumer. A stream is addressed by a path such as
``("bfe_sweep", "0.8km", "plus", 3)``; its 128-bit BLAKE2b digest of the
``/``-joined path becomes the ``spawn_key`` of a NumPy ``SeedSequence``
rooted at the master seed. Adding a new consumer therefore never changes the
numbers an existing one receives.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

MAX_SEED = 2**64 - 1


def stream_key(*path) -> tuple[int, ...]:
    digest = hashlib.blake2b("/".join(str(p) for p in path).encode(), digest_size=16).digest()
    return struct.unpack("<4I", digest)


def stream(master_seed: int, *path) -> np.random.Generator:
    if not 0 <= master_seed <= MAX_SEED:
        raise ValueError("master_seed must be an unsigned 64-bit integer")
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=stream_key(*path)))
