"""Platform-independent seeded randomness: SplitMix64 seeding of xoshiro256** streams.

A :class:`Xoshiro` instance runs ``LANES`` independent xoshiro256** states in
lock-step (numpy uint64 arithmetic wraps modulo 2**64), so bulk draws for whole
audio clips stay fast while every value remains a pure function of the seed.
Values are consumed lane-major within a step, step after step.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
LANES = 64


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def child_seed(seed: int, name: str) -> int:
    """Derive a 64-bit seed for a named sub-stream (e.g. one corpus item id)."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    _, out = splitmix64((int(seed) ^ int.from_bytes(digest, "little")) & MASK64)
    return out


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Xoshiro:
    def __init__(self, seed: int):
        state = int(seed) & MASK64
        words = []
        for _ in range(4 * LANES):
            state, out = splitmix64(state)
            words.append(out)
        s = np.array(words, dtype=np.uint64).reshape(LANES, 4).T.copy()
        self._s = s  # (4, LANES)
        self._buffer = np.empty(0, dtype=np.uint64)

    def _step(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self._s[3] = _rotl(s3, 45)
        return result

    def next_u64(self, n: int) -> np.ndarray:
        out = [self._buffer[:n]]
        have = out[0].size
        self._buffer = self._buffer[have:]
        need = n - have
        if need > 0:
            steps = -(-need // LANES)
            block = np.empty((steps, LANES), dtype=np.uint64)
            for i in range(steps):
                block[i] = self._step()
            block = block.ravel()
            out.append(block[:need])
            self._buffer = block[need:]
        return np.concatenate(out)

    def random(self, n: int | None = None):
        """Uniform doubles in [0, 1) with 53 random bits."""
        vals = (self.next_u64(1 if n is None else n) >> np.uint64(11)).astype(np.float64)
        vals *= 2.0 ** -53
        return float(vals[0]) if n is None else vals

    def uniform(self, low: float, high: float, n: int | None = None):
        u = self.random(n)
        return low + (high - low) * u

    def integers(self, low: int, high: int) -> int:
        """Integer in [low, high)."""
        return low + min(int(self.random() * (high - low)), high - low - 1)

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller."""
        m = (n + 1) // 2
        u = self.random(2 * m)
        radius = np.sqrt(-2.0 * np.log1p(-u[:m]))
        angle = 2.0 * np.pi * u[m:]
        return np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n)."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def choice(self, seq, k: int) -> list:
        """k distinct elements of ``seq``, in draw order."""
        if k > len(seq):
            raise ValueError("sample larger than population")
        return [seq[i] for i in self.permutation(len(seq))[:k]]
