"""SplitMix64, the deterministic generator behind all seeded randomness.

State update and output, with all arithmetic modulo 2**64::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

Floats are ``(z >> 11) * 2**-53`` in [0, 1). A Bernoulli(p) draw is
``uniform() < p``. The i-th output (0-based) depends only on
``seed + (i + 1) * GAMMA``, which lets :meth:`SplitMix64.u64_array` produce
blocks of the stream with numpy and stay bit-identical to the scalar path.
"""

from __future__ import annotations

import secrets
from typing import Callable

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1
_INV53 = 1.0 / (1 << 53)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return _mix(self.state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * _INV53

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def u64_array(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GAMMA) & MASK64
        return z

    def uniform_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV53

    def bernoulli_array(self, n: int, p: float) -> np.ndarray:
        return self.uniform_array(n) < p

    def normal_array(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller; consumes 2*ceil(n/2) outputs."""
        m = (n + 1) // 2
        u = self.uniform_array(2 * m)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        out = np.empty(2 * m)
        out[0::2] = z[:m]
        out[1::2] = z[m:]
        return out[:n]

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle, returning a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


def seeded_rng(seed: int) -> SplitMix64:
    return SplitMix64(seed)


def system_entropy() -> int:
    return secrets.randbits(64)


# Source of fresh seeds for unseeded (raw, Phase 1 style) strategy calls.
EntropySource = Callable[[], int]
