"""Deterministic randomness primitives.

Everything in the toolkit that needs a coin flip goes through this module so
that runs reproduce bit-for-bit across machines, operating systems and Python
versions.  The generator is splitmix64 (the standard constants from Steele,
Lea and Flood's SplittableRandom), chosen because it is tiny, well known and
trivially portable; `random.Random` is avoided because its higher-level
methods are not guaranteed stable across Python releases.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence, TypeVar

T = TypeVar("T")

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """splitmix64 sequence generator over a 64-bit state."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randrange(self, n: int) -> int:
        # Plain modulo reduction: the bias is at most n / 2**64, which is
        # irrelevant at the sizes used here and keeps the algorithm pinnable.
        if n <= 0:
            raise ValueError(f"randrange needs a positive bound, got {n}")
        return self.next_u64() % n


def _fisher_yates(items: Iterable[T], limit: int, seed: int) -> list[T]:
    out = list(items)
    gen = SplitMix64(seed)
    for i in range(min(limit, len(out) - 1)):
        j = i + gen.randrange(len(out) - i)
        out[i], out[j] = out[j], out[i]
    return out


def shuffled(items: Iterable[T], seed: int) -> list[T]:
    """Full Fisher-Yates shuffle; pure, returns a new list."""
    out = list(items)
    return _fisher_yates(out, len(out), seed)


def pick_first_k(items: Sequence[T], k: int, seed: int) -> list[T]:
    """The first k elements of the full shuffle (partial Fisher-Yates)."""
    if not 0 <= k <= len(items):
        raise ValueError(f"k must be within [0, {len(items)}], got {k}")
    return _fisher_yates(items, k, seed)[:k]


def stable_seed(*parts: object) -> int:
    """Derive a 64-bit seed from arbitrary parts via SHA-256.

    Built-in hash() is salted per process, so it must never feed a seed.
    """
    joined = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(joined.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def unit_uniform(*parts: object) -> float:
    """Deterministic uniform draw in [0, 1) keyed by the given parts."""
    return stable_seed(*parts) / 2.0**64
