"""Reproducible random streams addressed by (seed, lane, replicate).

The seed and a BLAKE2b hash of the lane label are mixed with splitmix64 into
the 128-bit key of a Philox4x64 generator. The replicate index occupies the
top word of the 256-bit Philox counter, so each replicate owns a disjoint
block of 2**192 counter values and replicates can be drawn in any order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def lane_hash(lane: str) -> int:
    return int.from_bytes(hashlib.blake2b(lane.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class StreamKey:
    seed: int
    lane: str = ""
    replicate: int = 0

    def child(self, sub: str) -> "StreamKey":
        """Key for an independent sub-stream of the same replicate."""
        return StreamKey(self.seed, f"{self.lane}/{sub}", self.replicate)

    def at(self, replicate: int) -> "StreamKey":
        return StreamKey(self.seed, self.lane, replicate)

    def philox_key(self) -> tuple[int, int]:
        s = splitmix64(self.seed & _MASK)
        h = splitmix64(lane_hash(self.lane) ^ s)
        return s, splitmix64(h)

    def rng(self) -> np.random.Generator:
        if not 0 <= self.replicate <= _MASK:
            raise ValueError("replicate must fit in 64 bits")
        k0, k1 = self.philox_key()
        bitgen = np.random.Philox(
            key=np.array([k0, k1], dtype=np.uint64),
            counter=np.array([0, 0, 0, self.replicate], dtype=np.uint64),
        )
        return np.random.Generator(bitgen)
