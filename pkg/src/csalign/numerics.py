"""Deterministic numeric primitives: validation, RNG, distances, sampling.

Everything downstream (kernels, losses, the trainer) funnels matrix inputs
through :func:`require_matrix` and draws randomness from :class:`RandomSource`,
a pure-Python xorshift64* stream.  Both are platform-independent, which is what
makes repeated CLI runs byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidCorrelation,
    ZeroNormRow,
    ZeroNormVector,
)

#: Row/vector norms at or below this are treated as zero.
ZERO_NORM_EPS = 1e-12

_MASK64 = (1 << 64) - 1
_XORSHIFT_MULT = 0x2545F4914F6CDD1D
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Mix a base seed with a stream tag into an independent 64-bit seed.

    Used to give each consumer (map init, sample noise, batch shuffling, ...)
    its own stream so that adding one consumer never shifts the draws seen by
    another.
    """
    return _splitmix64((seed & _MASK64) ^ _splitmix64(stream & _MASK64))


class RandomSource:
    """Seeded xorshift64* generator.

    Produces identical streams on every platform, unlike ``numpy.random``
    whose distribution algorithms may change between releases.  All sampling
    in this package goes through one of these.
    """

    def __init__(self, seed: int):
        self._state = _splitmix64(seed & _MASK64)
        if self._state == 0:
            self._state = _SPLITMIX_GAMMA

    def next_raw(self) -> int:
        """Advance the state and return 64 pseudo-random bits."""
        s = self._state
        s ^= s >> 12
        s = (s ^ (s << 25)) & _MASK64
        s ^= s >> 27
        self._state = s
        return (s * _XORSHIFT_MULT) & _MASK64

    def uniform(self) -> float:
        """One double in [0, 1) with 53 random mantissa bits."""
        return (self.next_raw() >> 11) * 2.0**-53

    def randint(self, lo: int, hi: int) -> int:
        """One integer uniform on the inclusive range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        j = int(self.uniform() * span)
        if j >= span:  # guard the (0.999...)*span rounding edge
            j = span - 1
        return lo + j

    def normals(self, count: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """``count`` i.i.d. normal draws via Box-Muller.

        Both outputs of each Box-Muller pair are consumed; for odd ``count``
        the final second output is discarded, keeping the stream position a
        function of ``count`` alone.
        """
        if count < 0:
            raise ValueError("count must be >= 0")
        out = np.empty(count, dtype=np.float64)
        i = 0
        while i < count:
            u1 = 1.0 - self.uniform()  # in (0, 1]: log is finite
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            theta = 2.0 * math.pi * u2
            out[i] = r * math.cos(theta)
            if i + 1 < count:
                out[i + 1] = r * math.sin(theta)
            i += 2
        if std != 1.0 or mean != 0.0:
            out = out * std + mean
        return out

    def permutation(self, n: int) -> np.ndarray:
        """A uniform random permutation of range(n), via Fisher-Yates."""
        idx = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randint(0, i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx


@dataclass(frozen=True)
class GaussianSpec:
    """A one-dimensional normal distribution N(mean, std**2)."""

    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0.0 and math.isfinite(self.std)):
            raise ValueError(f"std must be positive and finite, got {self.std!r}")
        if not math.isfinite(self.mean):
            raise ValueError(f"mean must be finite, got {self.mean!r}")


@dataclass(frozen=True)
class BivariateGaussianSpec:
    """A correlated pair of one-dimensional normals."""

    mean_x: float
    mean_y: float
    std_x: float
    std_y: float
    rho: float

    def __post_init__(self):
        for name in ("mean_x", "mean_y", "std_x", "std_y", "rho"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.std_x <= 0.0 or self.std_y <= 0.0:
            raise ValueError("std_x and std_y must be positive")
        if abs(self.rho) >= 1.0:
            raise InvalidCorrelation(f"|rho| must be < 1, got {self.rho!r}")


def require_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate an embedding matrix: 2-D float64, finite, at least one column.

    Accepts anything ``np.asarray`` can turn into a 2-D array and returns a
    C-contiguous float64 view/copy.  Zero rows are allowed (empty pools);
    zero columns are not.
    """
    arr = np.ascontiguousarray(np.asarray(m, dtype=np.float64))
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[1] < 1:
        raise DimensionMismatch(f"{name} must have at least one column")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def row_norms(m: np.ndarray) -> np.ndarray:
    """Euclidean norm of each row."""
    return np.sqrt((m * m).sum(axis=1))


def l2_normalize_rows(m, name: str = "matrix") -> np.ndarray:
    """Scale every row to unit Euclidean norm.

    Raises :class:`ZeroNormRow` (with the offending row index) if any row has
    norm <= 1e-12.  Idempotent to within rounding.
    """
    arr = require_matrix(m, name)
    norms = row_norms(arr)
    small = np.flatnonzero(norms <= ZERO_NORM_EPS)
    if small.size:
        row = int(small[0])
        raise ZeroNormRow(row, float(norms[row]))
    return arr / norms[:, None]


def cosine_sim(u, v) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1]."""
    ua = np.asarray(u, dtype=np.float64).ravel()
    va = np.asarray(v, dtype=np.float64).ravel()
    if ua.shape[0] != va.shape[0]:
        raise DimensionMismatch(
            f"vectors have lengths {ua.shape[0]} and {va.shape[0]}"
        )
    nu = math.sqrt(float(ua @ ua))
    nv = math.sqrt(float(va @ va))
    if nu <= ZERO_NORM_EPS or nv <= ZERO_NORM_EPS:
        raise ZeroNormVector("cosine similarity of a zero vector is undefined")
    value = float(ua @ va) / (nu * nv)
    return min(1.0, max(-1.0, value))


def pairwise_sq_dists(x, y) -> np.ndarray:
    """All squared Euclidean distances between rows of ``x`` and rows of ``y``.

    Accumulates one coordinate at a time, so every entry sums its squared
    differences in dimension order — the same order a nested-loop reference
    uses, which keeps results bit-identical to one.
    """
    xa = require_matrix(x, "x")
    ya = require_matrix(y, "y")
    if xa.shape[1] != ya.shape[1]:
        raise DimensionMismatch(
            f"column counts differ: {xa.shape[1]} vs {ya.shape[1]}"
        )
    out = np.zeros((xa.shape[0], ya.shape[0]), dtype=np.float64)
    for k in range(xa.shape[1]):
        diff = np.subtract.outer(xa[:, k], ya[:, k])
        out += diff * diff
    return out


def sample_gaussian(spec: GaussianSpec, count: int, dim: int, rng: RandomSource) -> np.ndarray:
    """``count`` rows of ``dim`` i.i.d. N(mean, std**2) entries, row-major fill."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if dim < 1:
        raise DimensionMismatch("dim must be >= 1")
    flat = rng.normals(count * dim, mean=spec.mean, std=spec.std)
    return flat.reshape(count, dim)


def sample_bivariate(
    spec: BivariateGaussianSpec, count: int, rng: RandomSource
) -> tuple[np.ndarray, np.ndarray]:
    """``count`` correlated scalar pairs, returned as two (count, 1) matrices.

    Uses the 2x2 Cholesky factor explicitly: x = mx + sx*z1,
    y = my + sy*(rho*z1 + sqrt(1-rho^2)*z2).
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    z = rng.normals(2 * count)
    z1 = z[0::2]
    z2 = z[1::2]
    x = spec.mean_x + spec.std_x * z1
    y = spec.mean_y + spec.std_y * (spec.rho * z1 + math.sqrt(1.0 - spec.rho**2) * z2)
    return x.reshape(count, 1), y.reshape(count, 1)
