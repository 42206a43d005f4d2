"""Dense float64 kernels and a counter-based, splittable random number source."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK_64 = (1 << 64) - 1
LRELU_SLOPE = 0.01


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def zeros_matrix(rows: int, cols: int) -> np.ndarray:
    _check_dims(rows, cols)
    return np.zeros((rows, cols), dtype=np.float64)


def gaussian_matrix(rng: "Rng", rows: int, cols: int, std: float, block: int = 0) -> np.ndarray:
    """I.i.d. Normal(0, std**2) entries drawn from counter block ``block`` of ``rng``."""
    _check_dims(rows, cols)
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    return rng.generator(block).normal(0.0, std, size=(rows, cols))


def softmax(e, axis: int = -1) -> np.ndarray:
    """Softmax with max-subtraction. Works on a vector or along ``axis``."""
    e = np.asarray(e, dtype=np.float64)
    if e.size == 0 or e.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    z = np.exp(e - e.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def lrelu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, LRELU_SLOPE * x)


def lrelu_grad(x):
    """Slope of ``lrelu`` at ``x``; 1 at exactly zero.

    Also valid when given lrelu's *output*, since the sign is preserved.
    """
    return np.where(np.asarray(x) >= 0, 1.0, LRELU_SLOPE)


def _check_dims(rows, cols):
    if int(rows) < 1 or int(cols) < 1:
        raise ShapeError(f"dimensions must be positive, got ({rows}, {cols})")


@dataclass(frozen=True)
class Rng:
    """A keyed Philox stream.

    ``(seed, stream)`` forms the 128-bit Philox key, so distinct streams are
    independent. Within a stream, ``generator(i, j)`` positions the 256-bit
    counter at a block reserved for the index pair ``(i, j)``; draws from one
    block never reach another (each block holds 2**128 counter values).
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not 0 <= v <= MASK_64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {v}")

    @property
    def key(self) -> int:
        return (self.stream << 64) | self.seed

    def substream(self, stream: int) -> "Rng":
        return Rng(self.seed, stream)

    def generator(self, i: int = 0, j: int = 0) -> np.random.Generator:
        _check_block(i, j)
        counter = (i << 192) | (j << 128)
        return np.random.Generator(np.random.Philox(key=self.key, counter=counter))

    def cursor(self) -> "Cursor":
        return Cursor(self)


class Cursor:
    """One reusable generator that can be moved to any counter block.

    ``cursor.at(i, j)`` yields the same draws as ``rng.generator(i, j)`` but
    avoids building a new bit generator per block.
    """

    def __init__(self, rng: Rng):
        self._bits = np.random.Philox(key=rng.key)
        self._gen = np.random.Generator(self._bits)
        self._state = self._bits.state

    def at(self, i: int = 0, j: int = 0) -> np.random.Generator:
        _check_block(i, j)
        st = self._state
        st["state"]["counter"][:] = (0, 0, j, i)
        st["buffer_pos"] = 4  # drop any buffered output
        st["has_uint32"] = 0
        self._bits.state = st
        return self._gen


def _check_block(i, j):
    if not (0 <= i <= MASK_64 and 0 <= j <= MASK_64):
        raise ValueError("counter indices must fit in 64 unsigned bits")
