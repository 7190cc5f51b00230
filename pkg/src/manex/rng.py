"""Named, seedable pseudorandom streams.

Every source of randomness in the library draws from an RngStream keyed by
(seed, name). Streams with different names are statistically independent and
fully reproducible, so adding a new consumer (e.g. the exploration plug-in)
never shifts the draws seen by existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "big")


class RngStream:
    """PCG64 stream addressed by an integer seed and a string name."""

    def __init__(self, seed: int, name: str = "root"):
        self.seed = int(seed)
        self.name = name
        ss = np.random.SeedSequence([self.seed & _MASK64, _name_key(name)])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, name: str) -> "RngStream":
        """Derive an independent stream; same (seed, path) always yields the same stream."""
        return RngStream(self.seed, f"{self.name}/{name}")

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        """Uniform integers in [low, high) like numpy's Generator.integers."""
        return self._gen.integers(low, high, size=shape)
