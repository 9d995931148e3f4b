"""Seeded, portable random streams.

All randomness flows from one u64 seed through named substreams backed by
the Philox 4x64 counter-based generator, so runs reproduce bit-for-bit
across platforms. Substream keys are derived by hashing ``"{seed}:{name}"``
with SHA-256, making streams independent of each other and of call order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    key = np.frombuffer(digest[:16], dtype="<u8")
    return np.random.Generator(np.random.Philox(key=key))
