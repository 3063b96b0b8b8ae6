"""Deterministic random number generation.

Everything random in this package flows through :class:`SplitMix64`, so a
run is reproduced exactly by its seed, independent of platform defaults.

Generator algorithm (fixed contract, do not change without bumping the
checkpoint format version):

* State is a single 64-bit integer. Each draw adds the constant
  0x9E3779B97F4A7C15 to the state and scrambles a copy of it:
  ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
  z *= 0x94D049BB133111EB; z ^= z >> 31`` (all mod 2**64).
  This is SplitMix64 (Steele, Lea & Flood 2014).
* Uniform doubles in [0, 1) take the top 53 bits: ``(z >> 11) * 2**-53``.
* Gaussians use the Box-Muller transform on a uniform pair; the second
  deviate of each pair is cached and returned by the next call.
* Bounded integers use the multiply-shift reduction
  ``(z * n) >> 64``; shuffling is the Fisher-Yates walk from the top.

Independent streams are derived, never split by convention: see
:func:`derive_seed`.
"""

from __future__ import annotations

import hashlib
import math

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *tags: int | str) -> int:
    """Derive a child seed from a master seed and a tag path.

    Tags name the consumer (e.g. ``("round", 3, "client", 1)``); equal
    (master, tags) always yields the same child seed and distinct tag
    paths decorrelate. Strings are reduced to 64 bits via the first
    8 bytes (little-endian) of their SHA-256.
    """
    state = master & _MASK64
    for tag in tags:
        if isinstance(tag, str):
            t = int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")
        else:
            t = tag & _MASK64
        state = _mix((state + _GAMMA) & _MASK64) ^ t
    return _mix((state + _GAMMA) & _MASK64)


class SplitMix64:
    """SplitMix64 stream with uniform, Gaussian and shuffle helpers."""

    __slots__ = ("_state", "_gauss_cache")

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._gauss_cache: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix(self._state)

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def gauss(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Gaussian deviate via Box-Muller; std = 0 degenerates to mean."""
        if std == 0.0:
            return mean
        if self._gauss_cache is not None:
            z = self._gauss_cache
            self._gauss_cache = None
        else:
            # u1 in (0, 1] so the log is finite.
            u1 = 1.0 - self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            theta = 2.0 * math.pi * u2
            z = r * math.cos(theta)
            self._gauss_cache = r * math.sin(theta)
        return mean + std * z

    def below(self, n: int) -> int:
        """Integer in [0, n) by multiply-shift reduction."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return (self.next_u64() * n) >> 64

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.below(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        self.shuffle(idx)
        return idx

    def getstate(self) -> tuple[int, float | None]:
        return (self._state, self._gauss_cache)

    def setstate(self, state: tuple[int, float | None]) -> None:
        self._state = state[0] & _MASK64
        self._gauss_cache = state[1]
