"""Seeded random sources with derivable sub-streams."""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


class RandomSource:
    """A numpy ``Generator`` keyed by ``(seed, stream)``.

    Two sources built from the same pair produce identical draw sequences.
    Distinct streams are statistically independent (``SeedSequence`` spawn
    keys), so parallel workers each take their own stream.
    """

    def __init__(self, seed: int = 0, stream: int = 0):
        self.seed = int(seed) & MASK64
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream: int) -> "RandomSource":
        return RandomSource(self.seed, stream)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, stream={self.stream})"


def block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    """Generator for one fixed-size block of trials of a ``(seed, stream)`` run.

    Results assembled block by block do not depend on how blocks are
    distributed over workers.
    """
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def as_source(rng) -> RandomSource:
    """Accept a RandomSource, an int seed, or None (seed 0)."""
    if isinstance(rng, RandomSource):
        return rng
    if rng is None:
        return RandomSource(0)
    return RandomSource(int(rng))
