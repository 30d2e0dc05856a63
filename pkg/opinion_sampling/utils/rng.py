"""
Seeded randomness for every stochastic routine.

Streams are keyed by a master seed plus integer coordinates (sample id, node,
rounding trial, experiment cell ...). The bit generator is the counter-based
Philox, so two streams that differ in any coordinate never overlap and a
parallel run reproduces the sequential one exactly.
"""

import hashlib
from typing import Union

import numpy as np

SeedLike = Union[int, np.random.Generator, None]


def stable_key(value) -> int:
    """Map a coordinate (int or str) to a non-negative 32-bit integer."""
    if isinstance(value, (int, np.integer)):
        if value < 0:
            raise ValueError(f"stream coordinates must be non-negative, got {value}")
        return int(value)
    digest = hashlib.blake2b(str(value).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *coords) -> np.random.Generator:
    """Generator for the stream `(seed, coords...)`."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(stable_key(c) for c in coords))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *coords) -> int:
    """64-bit integer seed for the stream `(seed, coords...)`; used for reporting."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(stable_key(c) for c in coords))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(0 if seed is None else seed)


class UniformStream:
    """Buffered scalar uniforms; avoids one Generator call per event in hot loops."""

    def __init__(self, rng: np.random.Generator, batch: int = 4096):
        self._rng = rng
        self._batch = batch
        self._buf = rng.random(batch).tolist()
        self._pos = 0

    def next(self) -> float:
        if self._pos >= self._batch:
            self._buf = self._rng.random(self._batch).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u
