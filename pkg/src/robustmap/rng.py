"""Keyed random streams.

Every random draw in a run comes from a Philox generator whose key is
(master seed, purpose, indices...).  Streams are independent of the order
in which they are requested, which keeps runs bitwise reproducible.
"""
from __future__ import annotations

import zlib

import numpy as np

_PURPOSES = {
    "readings": 1,
    "resample": 2,
    "initial-poses": 3,
    "failures": 4,
    "terrain": 5,
    "trial": 6,
    "jitter": 7,
}


def _purpose_id(purpose: str) -> int:
    if purpose in _PURPOSES:
        return _PURPOSES[purpose]
    return 1000 + zlib.crc32(purpose.encode())


def stream(seed: int, purpose: str, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_purpose_id(purpose), *map(int, key)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, purpose: str, *key: int) -> int:
    """A 63-bit child seed, for handing to code that wants a plain integer."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_purpose_id(purpose), *map(int, key)))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
