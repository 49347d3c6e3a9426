"""Dense float64 arrays, the few checked kernels built on them, and a seeded RNG.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order.  The helpers here add the shape checking and tie-break rules the rest
of the package relies on.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DomainError, ShapeError

DTYPE = np.float64

_GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def elementwise(op: str, a: np.ndarray, b) -> np.ndarray:
    """Apply ``add``, ``sub``, ``mul`` or ``scale`` pointwise.

    ``b`` must have the same shape as ``a`` unless it is a scalar; no other
    broadcasting is allowed.
    """
    a = np.asarray(a, dtype=DTYPE)
    if op == "scale":
        if not np.isscalar(b):
            raise ShapeError("scale: second operand must be a scalar")
        return a * float(b)
    if not np.isscalar(b):
        b = np.asarray(b, dtype=DTYPE)
        if b.shape != a.shape:
            raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def argmax(v: np.ndarray) -> int:
    v = np.asarray(v)
    if v.size == 0:
        raise DomainError("argmax of an empty tensor")
    if v.ndim != 1:
        raise ShapeError(f"argmax expects a rank-1 tensor, got shape {v.shape}")
    # np.argmax returns the first occurrence, which is the tie-break we want
    return int(np.argmax(v))


def derive_seed(seed: int, *labels) -> int:
    """Derive an independent 64-bit sub-seed from ``seed`` and a purpose label."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & _MASK64).to_bytes(8, "little"))
    for label in labels:
        h.update(b"\x00")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def _splitmix64(states: np.ndarray) -> np.ndarray:
    z = states.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


class SeededRng:
    """SplitMix64 generator (Steele, Lea & Flood 2014).

    The n-th output only depends on ``seed + n * gamma``, so blocks of
    outputs are produced with vectorized uint64 arithmetic and the sequence
    is identical however the draws are grouped into calls.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_uint64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            states = np.uint64(self.seed) + idx * _GOLDEN_GAMMA
            return _splitmix64(states)

    def uniform(self, shape=()) -> np.ndarray:
        """Doubles in [0, 1) with 53 random bits each."""
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_uint64(n) >> np.uint64(11)
        return (bits.astype(DTYPE) * 2.0**-53).reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        # Box-Muller, cosine branch only: two uniforms per normal
        n = int(np.prod(shape, dtype=np.int64))
        u = self.uniform((2, n))
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        return (r * np.cos(2.0 * np.pi * u[1])).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_uint64(n)
        return np.argsort(keys, kind="stable")

    def get_state(self) -> tuple[int, int]:
        return self.seed, self.counter

    def set_state(self, state) -> None:
        self.seed, self.counter = int(state[0]), int(state[1])

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, counter={self.counter})"
