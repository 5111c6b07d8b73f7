"""Dense float64 containers, tiny linear-algebra ops, and a portable seeded RNG.

Vectors are 1-D and matrices 2-D row-major numpy float64 arrays; the
constructors below validate shape and finiteness so the rest of the package
can assume well-formed inputs.
"""

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF


class DimensionError(ValueError):
    """Operand shapes do not line up."""


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")


def vector(data) -> np.ndarray:
    """Validated dense vector: 1-D, non-empty, finite, float64."""
    v = np.asarray(data, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    _check_finite(v, "vector")
    return v


def matrix(data) -> np.ndarray:
    """Validated dense matrix: 2-D, positive dims, finite, float64, row-major."""
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise DimensionError(f"expected a 2-D matrix with positive dims, got shape {m.shape}")
    _check_finite(m, "matrix")
    return m


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product, out[r] = sum_c m[r, c] * v[c]."""
    if m.ndim != 2 or v.ndim != 1:
        raise DimensionError(f"matvec needs a 2-D matrix and 1-D vector, got {m.shape} and {v.shape}")
    if m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec dimension mismatch: {m.shape} @ {v.shape}")
    return m @ v


def sq_euclidean(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance sum_i (a_i - b_i)^2."""
    if a.shape != b.shape:
        raise DimensionError(f"sq_euclidean dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.dot(d, d))


def argmin(values) -> int:
    """Index of the smallest value; ties break to the lowest index."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("argmin needs a non-empty 1-D sequence")
    _check_finite(v, "argmin input")
    return int(np.argmin(v))


def _splitmix64(x: int) -> int:
    # SplitMix64 step (Steele et al.), used only to expand the seed.
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class SeededRng:
    """Deterministic xoshiro256** generator.

    The stream is fully specified by its recurrence, so identical seeds give
    identical 64-bit outputs on every platform and run:

        result = rotl(s1 * 5, 7) * 9          (all mod 2^64)
        t  = s1 << 17
        s2 ^= s0;  s3 ^= s1;  s1 ^= s2;  s0 ^= s3
        s2 ^= t;   s3 = rotl(s3, 45)

    State is initialised from the seed by four SplitMix64 steps. Floating
    point helpers (gauss, uniform) are deterministic per platform; the
    portable contract is the integer stream.
    """

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        x = self.seed
        state = []
        for _ in range(4):
            x = (x + 0x9E3779B97F4A7C15) & MASK64
            state.append(_splitmix64(x))
        self._s = state

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform float64 in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Standard Box-Muller draw (no cached spare, keeps state minimal)."""
        u1 = self.random()
        while u1 <= 0.0:
            u1 = self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        return mu + sigma * r * math.cos(2.0 * math.pi * u2)

    def shuffle(self, seq) -> None:
        """In-place Fisher-Yates shuffle of a mutable sequence."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def weighted_index(self, weights: np.ndarray) -> int:
        """Index drawn with probability proportional to nonnegative weights."""
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D sequence")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        total = float(w.sum())
        if total <= 0.0:
            raise ValueError("weights sum to zero")
        r = self.random() * total
        cum = np.cumsum(w)
        idx = int(np.searchsorted(cum, r, side="right"))
        return min(idx, w.size - 1)

    def state(self):
        return tuple(self._s)

    def set_state(self, state) -> None:
        if len(state) != 4:
            raise ValueError("rng state must hold exactly 4 words")
        self._s = [int(x) & MASK64 for x in state]
