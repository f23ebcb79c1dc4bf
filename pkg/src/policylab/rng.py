"""Deterministic pseudo-random numbers for simulations.

SplitMix64 with 64-bit state. Uniform reals take the high 53 bits of each
output word, so sequences are identical across platforms and processes for a
given seed. Substreams are derived by hashing a key tuple into a fresh seed,
which makes parallel evaluation order-independent: every entity draws from its
own stream regardless of scheduling.
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MIX_SALT = 0x8A5CD789635D2DFF


def _finalize(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for b in text.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & MASK64
    return h


def mix(*parts: int | str) -> int:
    """Fold seed components (ints or strings) into a single 64-bit seed."""
    h = _MIX_SALT
    for part in parts:
        v = _fnv1a(part) if isinstance(part, str) else part & MASK64
        h = _finalize(((h ^ v) * _GAMMA) & MASK64)
    return h


class Rng:
    """SplitMix64 stream. ``seed`` is retained so substreams can be derived."""

    __slots__ = ("seed", "_state")

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self._state = self.seed

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & MASK64
        return _finalize(self._state)

    def random(self) -> float:
        """Uniform float in [0, 1) built from the high 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, low: float, high: float) -> float:
        return low + self.random() * (high - low)

    def randint(self, low: int, high: int) -> int:
        """Uniform integer in [low, high], rejection-sampled to avoid bias."""
        if high < low:
            raise ValueError("empty range")
        span = high - low + 1
        threshold = (1 << 64) % span
        while True:
            word = self.next_u64()
            if word >= threshold:
                return low + (word % span)

    def substream(self, *key: int | str) -> "Rng":
        """Independent stream derived from this stream's seed and a key."""
        return Rng(mix(self.seed, *key))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Rng(seed={self.seed:#x})"
