"""Deterministic numeric primitives.

Checked dense matrix ops, temperature softmax, clamped logarithms, a
seedable RNG with named sub-streams, and a central finite-difference
gradient oracle used throughout the test suite. All math is float64;
matrices are plain row-major numpy arrays.
"""

import hashlib

import numpy as np

from .errors import DomainError, NumericError, ParameterError, ShapeError

# Clamp applied inside logs and divisions to survive degenerate simplexes.
EPSILON = 1e-7

_MASK64 = (1 << 64) - 1


def as_matrix(values) -> np.ndarray:
    """Coerce to a finite 2-d float64 array; 1-d input becomes a single row."""
    m = np.asarray(values, dtype=float)
    if m.ndim == 1:
        m = m[np.newaxis, :]
    if m.ndim != 2:
        raise ShapeError(f"expected a 1-d or 2-d array, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix contains non-finite values")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape and finiteness checks."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matrix product overflowed to non-finite values")
    return out


def softmax_temp(logits, temperature: float):
    """Row-wise softmax of logits / temperature.

    Rows are shifted by their max before exponentiation, so any finite
    input yields a valid probability simplex per row.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    arr = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NumericError("softmax input contains non-finite values")
    scaled = arr / temperature
    rows = np.atleast_2d(scaled)
    shifted = rows - rows.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out if arr.ndim == 2 else out[0]


def safe_log(p, epsilon: float = EPSILON):
    """ln(max(p, epsilon)); rejects negative inputs."""
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0):
        raise DomainError("log argument must be nonnegative")
    if not np.all(np.isfinite(arr)):
        raise DomainError("log argument must be finite")
    out = np.log(np.maximum(arr, epsilon))
    return float(out) if arr.ndim == 0 else out


def finite_diff_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, entry by entry.

    Independent of any analytic gradient code, which is the point: this
    is the oracle the backward passes are checked against.
    """
    if h <= 0:
        raise ParameterError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"function evaluated to a non-finite value near index {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def _name_key(name: str) -> int:
    # Stable across processes, unlike hash().
    digest = hashlib.blake2s(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Seeded random stream with named sub-streams.

    The same seed always reproduces the same stream, and sub-streams
    derived with the same names are themselves reproducible, so every
    experiment in the package can be replayed exactly.
    """

    def __init__(self, seed: int, _lineage: tuple = ()):
        self.seed = int(seed)
        self._lineage = tuple(_lineage)
        self._gen = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed & _MASK64, spawn_key=self._lineage)
        )

    def substream(self, name: str) -> "Rng":
        """Independent child stream keyed by name; safe for parallel use."""
        return Rng(self.seed, self._lineage + (_name_key(name),))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def shuffle(self, x):
        self._gen.shuffle(x)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def __repr__(self):
        return f"Rng(seed={self.seed}, lineage={self._lineage})"
