"""Reproducible pseudo-random streams.

Traces must be reproducible by other implementations, so the generator is
fixed and documented here instead of delegating to numpy:

* core generator: xoshiro256** (Blackman & Vigna), 256-bit state, 64-bit
  output ``rotl(s1 * 5, 7) * 9``;
* seeding: the four state words are the first four outputs of SplitMix64
  started from the 64-bit stream key;
* stream keys: ``splitmix64_mix(seed ^ mix(purpose) ^ mix(index))`` where
  ``purpose`` is hashed with FNV-1a 64 and ``mix`` is the SplitMix64
  finalizer, so every (seed, purpose, epoch) triple gets an independent
  stream without sharing state;
* uniforms: ``(next_u64() >> 11) * 2**-53`` in [0, 1);
* normals: Box-Muller, ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``, two uniforms
  per normal, no caching of the sine branch.
"""

import math

MASK64 = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64_mix(z):
    """SplitMix64 output finalizer."""
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


def _fnv1a64(text):
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def stream_key(seed, purpose="", index=0):
    return splitmix64_mix(
        (seed & MASK64)
        ^ splitmix64_mix(_fnv1a64(purpose))
        ^ splitmix64_mix((index + 0x9E3779B97F4A7C15) & MASK64)
    )


class Xoshiro256:
    """xoshiro256** generator seeded through SplitMix64."""

    def __init__(self, key):
        x = key & MASK64
        state = []
        for _ in range(4):
            x = (x + 0x9E3779B97F4A7C15) & MASK64
            state.append(splitmix64_mix(x))
        self.s = state

    @classmethod
    def stream(cls, seed, purpose="", index=0):
        return cls(stream_key(seed, purpose, index))

    def next_u64(self):
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self, mu=0.0, sigma=1.0):
        u1 = self.random()
        u2 = self.random()
        return mu + sigma * math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def lognormal_factor(self, sigma):
        """exp(N(0, sigma^2)); exactly 1.0 when sigma is zero (no draw)."""
        if sigma == 0:
            return 1.0
        return math.exp(self.normal(0.0, sigma))
