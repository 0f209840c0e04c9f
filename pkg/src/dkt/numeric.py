"""Dense float64 helpers shared by every other module.

Matrices and vectors are plain ``numpy.ndarray`` objects with dtype float64.
Randomness goes through :class:`Rng`, a thin wrapper over numpy's Philox
counter-based generator keyed by ``(seed, stream)`` so that results do not
depend on platform defaults.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64

# Per-purpose random streams derived from a single user seed.
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_SYNTH = 3
STREAM_SPLIT = 4
STREAM_TEST = 99


class ShapeError(ValueError):
    """Raised when array shapes are incompatible."""


class Rng:
    """Philox4x64 stream keyed by ``(seed, stream)``.

    Philox is counter based, so a key fully determines the output sequence
    on every platform numpy supports.  ``sub`` derives an independent
    stream, e.g. one shuffle stream per epoch.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def sub(self, index: int) -> "Rng":
        # Mixes index into the stream word; collisions need 2**32 sub-streams.
        return Rng(self.seed, (self.stream << 32) ^ (int(index) + 1))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def as_matrix(a) -> np.ndarray:
    return np.asarray(a, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape checking."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def sigmoid(x):
    """Logistic function using the overflow-free two-branch form."""
    x = np.asarray(x, dtype=DTYPE)
    # exp(-|x|) never overflows; x >= 0 uses 1/(1+e), x < 0 uses e/(1+e).
    e = np.exp(-np.abs(x))
    denom = 1.0 + e
    out = np.where(x >= 0, 1.0, e) / denom
    return out if out.ndim else float(out)


def tanh(x):
    x = np.asarray(x, dtype=DTYPE)
    out = np.tanh(x)
    return out if out.ndim else float(out)


def glorot_init(rows: int, cols: int, rng: Rng) -> np.ndarray:
    """Uniform Glorot/Xavier init on ``[-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]``."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"glorot_init needs positive dimensions, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(DTYPE, copy=False)
