"""Counter-based SplitMix64 streams.

Output ``i`` of stream ``(seed, name)`` is ``mix64(key + (i + 1) * GAMMA)``
where ``key = mix64(seed) ^ sha256(name)[:8]`` (little endian) and
``mix64`` is the SplitMix64 finalizer. Uniform doubles take the top 53 bits.
Only integer ops are involved up to that point, so streams are identical on
every platform.
"""

from __future__ import annotations

import hashlib

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class Stream:
    def __init__(self, seed: int, name: str):
        salt = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
        self.key = mix64(seed) ^ salt
        self.counter = 0

    def bits(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64_array(np.uint64(self.key) + idx * np.uint64(GAMMA))

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def log_uniform(self, n: int, low: float, high: float) -> np.ndarray:
        return np.exp(self.uniform(n, np.log(low), np.log(high)))

    def integers(self, n: int, low: int, high: int) -> np.ndarray:
        """Integers in ``[low, high)``."""
        return low + (self.bits(n) % np.uint64(high - low)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.bits(n), kind="stable")
