"""Randomness sources.

Production code draws from the OS CSPRNG.  Passing a seed swaps in a
reproducible generator so that whole scenarios (keys, nonces, challenges)
replay byte-for-byte; seeded sources are for tests and demos only.
"""

from __future__ import annotations

import hashlib
import os
import random


class Rng:
    def __init__(self, seed: int | None = None) -> None:
        self.seed = seed
        self._prng = random.Random(seed) if seed is not None else None

    def bytes(self, n: int) -> bytes:
        if self._prng is None:
            return os.urandom(n)
        return self._prng.randbytes(n)

    def fork(self, label: str) -> "Rng":
        """Independent child stream; stable for a given seed and label."""
        if self._prng is None:
            return Rng()
        return Rng(int.from_bytes(self.bytes(8), "big") ^ hash_label(label))


def hash_label(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "big")


system_rng = Rng()
