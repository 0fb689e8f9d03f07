"""Counter-based deterministic random streams.

Every stochastic routine in the library draws from a stream derived from a
(seed, purpose, level, index) key. Derivation is a pure function of the key,
so any piece of work can be recomputed independently and in any order: results
are bit-identical no matter how the work is scheduled across threads.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class Purpose(IntEnum):
    """What a stream is consumed for; part of the derivation key."""

    DATA_DRAW = 0
    INNER_SAMPLE = 1
    LEVEL_DRAW = 2
    INIT = 3


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _mix(*words: int) -> int:
    h = _GOLDEN
    for w in words:
        h = _splitmix64(h ^ (int(w) & _MASK64))
    return h


def child_seed(seed: int, *tags: int) -> int:
    """Derive an independent 64-bit seed from a seed and integer tags."""
    return _mix(seed, *tags)


@dataclass(frozen=True)
class StreamKey:
    seed: int
    purpose: Purpose
    level: int = 0
    index: int = 0


class RandomStream:
    """Uniform and standard-normal draws from one derived stream.

    Normal variates use the inverse CDF applied to open-interval uniforms,
    so the mapping from raw bits to variates is fixed and platform-stable.
    """

    def __init__(self, key: StreamKey):
        self.key = key
        h = _mix(key.seed, key.purpose.value, key.level, key.index)
        self._gen = np.random.Generator(np.random.Philox(seed=h))

    def uniform(self, n=None):
        """Uniform draws on [0, 1)."""
        return self._gen.random(n)

    def open_uniform(self, n=None):
        """Uniform draws on the open interval (0, 1)."""
        j = self._gen.integers(0, 1 << 53, size=n)
        return (j + 0.5) * 2.0**-53

    def normal(self, n=None):
        """Standard normal draws via the inverse CDF."""
        return ndtri(self.open_uniform(n))

    def indices(self, n_max: int, count: int) -> np.ndarray:
        """`count` uniform indices in [0, n_max)."""
        u = self._gen.random(count)
        return np.minimum((u * n_max).astype(np.int64), n_max - 1)


def derive_stream(key: StreamKey) -> RandomStream:
    return RandomStream(key)


@dataclass(frozen=True)
class Rng:
    """Handle bundling a seed with a call-scope salt.

    `stream(purpose, level, index)` derives the stream for one unit of work;
    the salt occupies the high half of the key index so nested loops
    (replicate, iteration, chunk) never collide.
    """

    seed: int
    salt: int = 0

    def stream(self, purpose: Purpose, level: int = 0, index: int = 0) -> RandomStream:
        if not 0 <= self.salt < (1 << 32) or not 0 <= index < (1 << 32):
            raise ValueError("salt and index must fit in 32 bits")
        return RandomStream(
            StreamKey(self.seed, purpose, level, (self.salt << 32) | index)
        )

    def with_salt(self, salt: int) -> "Rng":
        return Rng(self.seed, salt)

    def child(self, *tags: int) -> "Rng":
        """Independent Rng for a sub-task (replicate, worker, experiment)."""
        return Rng(child_seed(self.seed, *tags), 0)
