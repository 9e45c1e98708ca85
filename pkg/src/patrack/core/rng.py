"""
PATrack Core - Deterministic PRNG.

splitmix64 with scalar and vectorized draws. Every random decision in the
package (weight init, scene generation, degradations, training jitter) goes
through an Rng so a seed fixes the full run.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

from patrack.exceptions import UsageException

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

_U30, _U27, _U31 = np.uint64(30), np.uint64(27), np.uint64(31)
_U11 = np.uint64(11)
_INV_2_53 = 1.0 / float(1 << 53)


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U30)) * np.uint64(MIX1)
        z = (z ^ (z >> _U27)) * np.uint64(MIX2)
    return z ^ (z >> _U31)


class Rng:
    """splitmix64 generator; `state` is the full 64-bit state."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    @classmethod
    def derive(cls, seed: int, *keys: int | str) -> Rng:
        """Child generator for (seed, key, ...); stable across processes."""
        state = int(seed) & MASK64
        for key in keys:
            k = zlib.crc32(key.encode("utf-8")) if isinstance(key, str) else int(key) & MASK64
            state = mix64(((state ^ k) + GOLDEN) & MASK64)
        return cls(state)

    # ------------------------------------------------------------------
    # Scalar draws
    # ------------------------------------------------------------------

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integers(self, low: int, high: int) -> int:
        """Integer in [low, high)."""
        span = high - low
        if span <= 0:
            raise UsageException(f"empty integer range [{low}, {high})")
        return low + self.next_u64() % span

    def permutation(self, n: int) -> list[int]:
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            order[i], order[j] = order[j], order[i]
        return order

    # ------------------------------------------------------------------
    # Vectorized draws (stream-equivalent to repeated scalar draws)
    # ------------------------------------------------------------------

    def u64_array(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GOLDEN)
        self.state = (self.state + n * GOLDEN) & MASK64
        return _mix64_array(states)

    def random_array(self, shape: int | tuple[int, ...]) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape))
        return ((self.u64_array(n) >> _U11).astype(np.float64) * _INV_2_53).reshape(shape)

    def uniform_array(self, low: float, high: float, shape: int | tuple[int, ...]) -> np.ndarray:
        return low + (high - low) * self.random_array(shape)

    def normal_array(self, shape: int | tuple[int, ...], std: float = 1.0) -> np.ndarray:
        """Box-Muller normals."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape))
        half = (n + 1) // 2
        u1 = 1.0 - self.random_array(half)
        u2 = self.random_array(half)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
        return (z * std).reshape(shape)

    def truncated_normal_array(self, shape: int | tuple[int, ...], std: float = 0.02) -> np.ndarray:
        """Normals redrawn until they fall inside +-2 std."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape))
        out = np.empty(n, dtype=np.float64)
        filled = 0
        while filled < n:
            draw = self.normal_array(max(n - filled, 16))
            keep = draw[np.abs(draw) <= 2.0][: n - filled]
            out[filled : filled + keep.size] = keep
            filled += keep.size
        return (out * std).reshape(shape)
