"""Counter-based pseudo-random numbers with splittable substreams.

Every draw is a pure function of (seed, counter): output_n = mix64(seed +
n * GOLDEN) where mix64 is the SplitMix64 finalizer.  Streams therefore
reproduce bit-exactly regardless of how draws are batched, and substreams
derived from labels are independent of the parent's counter position.
All floating-point draws are generated in float64; callers cast afterwards
so the underlying bit stream does not depend on the active precision.
"""

from __future__ import annotations

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(z: np.ndarray) -> np.ndarray:
    # uint64 wraparound is the point; numpy warns on scalar overflow only
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX_A
        z = (z ^ (z >> np.uint64(27))) * _MIX_B
        return z ^ (z >> np.uint64(31))


def _fnv1a(label: str) -> int:
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class Prng:
    """Deterministic counter-based generator (SplitMix64 core)."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def substream(self, label: str) -> "Prng":
        """Independent child stream; derivation ignores the counter."""
        child_seed = _mix64(self.seed ^ _mix64(np.uint64(_fnv1a(label))))
        return Prng(int(child_seed))

    def raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return _mix64(self.seed + idx * _GOLDEN)

    def uniform(self, shape=()) -> np.ndarray:
        """float64 in [0, 1), 53-bit resolution."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return u.reshape(shape) if shape else u[0]

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller; consumes 2 raws per pair."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        half = (n + 1) // 2
        bits = self.raw(2 * half)
        # offset keeps u1 in (0, 1): log stays finite
        u1 = ((bits[:half] >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)
        u2 = (bits[half:] >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else z[0]

    def randint(self, lo: int, hi: int, shape=()) -> np.ndarray:
        """Uniform integers in [lo, hi)."""
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        u = self.uniform(shape if shape else (1,))
        vals = lo + np.floor(u * (hi - lo)).astype(np.int64)
        return vals.reshape(shape) if shape else int(vals[0])

    def choice_index(self, probs) -> int:
        """Index drawn from a discrete distribution (probs sum to 1)."""
        u = float(self.uniform())
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if u < acc:
                return i
        return len(probs) - 1

    def permutation(self, n: int) -> np.ndarray:
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randint(0, i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
