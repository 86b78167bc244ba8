"""Deterministic seed derivation.

Every random stream in the package is derived from a base seed plus a tuple of
labels (strings or integers) through a stable hash. This keeps replicas,
per-event generators and per-traveller schedules independent of each other and
of execution order: replica k sees the same stream no matter how many replicas
run, in which order, or on how many workers.
"""

from __future__ import annotations

import hashlib
import random

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(base_seed: int, *parts: int | str) -> int:
    """Mix ``base_seed`` and the label tuple into a 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update((base_seed & _MASK64).to_bytes(8, "little"))
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode("utf-8") + b"\x00")
        else:
            h.update(b"i" + (part & _MASK64).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


def generator(base_seed: int, *parts: int | str) -> np.random.Generator:
    """NumPy generator on the derived stream."""
    return np.random.Generator(np.random.PCG64(derive_seed(base_seed, *parts)))


def python_rng(base_seed: int, *parts: int | str) -> random.Random:
    """Stdlib generator on the derived stream (cheap to create per event)."""
    return random.Random(derive_seed(base_seed, *parts))


def replica_seed(base_seed: int, replica: int) -> int:
    """Seed for replica ``replica``; independent of the replica count."""
    return derive_seed(base_seed, "replica", replica)
