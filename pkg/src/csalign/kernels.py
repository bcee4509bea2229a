"""Gaussian kernel evaluation and Gram-mean statistics.

The Gram means here are V-statistics: averages over *all* ordered pairs,
self-pairs included.  Reductions run in a fixed sequential order (row-major
over the kernel matrix, blocked only along rows, with an explicit carry), so
a result is reproducible bit-for-bit and matches a nested-loop reference that
adds terms in the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySet
from .numerics import pairwise_sq_dists, require_matrix

# Rows of the left factor handled per block; keeps peak memory at
# _BLOCK_ROWS * N doubles without changing the reduction order.
_BLOCK_ROWS = 256


@dataclass(frozen=True)
class KernelParams:
    """Width of the Gaussian kernel exp(-||u - v||^2 / (2 sigma^2))."""

    sigma: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")

    @property
    def inv_two_sigma_sq(self) -> float:
        return 1.0 / (2.0 * self.sigma * self.sigma)


@dataclass(frozen=True)
class GramStats:
    """The three Gram means a divergence estimate is built from."""

    mean_xx: float
    mean_yy: float
    mean_xy: float


def gaussian_kernel(u, v, params: KernelParams) -> float:
    """Kernel value for two single vectors.

    Shares the squared-distance and exp code paths with the matrix routines,
    so a Gram entry and a direct call agree bitwise.
    """
    ua = np.asarray(u, dtype=np.float64).ravel().reshape(1, -1)
    va = np.asarray(v, dtype=np.float64).ravel().reshape(1, -1)
    d2 = pairwise_sq_dists(ua, va)
    return float(np.exp(d2 * (-params.inv_two_sigma_sq))[0, 0])


def kernel_matrix(x, y, params: KernelParams) -> np.ndarray:
    """Full kernel matrix K[i, j] = kernel(x_i, y_j).

    Unblocked; intended for gradient computations at mini-batch scale.
    """
    d2 = pairwise_sq_dists(x, y)
    return np.exp(d2 * (-params.inv_two_sigma_sq))


def _gram_sum(x: np.ndarray, y: np.ndarray, inv_two_sigma_sq: float) -> float:
    """Sum of all kernel values, accumulated row-major with an explicit carry."""
    total = 0.0
    for start in range(0, x.shape[0], _BLOCK_ROWS):
        block = x[start : start + _BLOCK_ROWS]
        k = np.exp(pairwise_sq_dists(block, y) * (-inv_two_sigma_sq))
        # Prepending the carry keeps the blocked reduction bit-identical to a
        # single flat left-to-right sum.
        total = float(np.add.accumulate(np.concatenate(([total], k.ravel())))[-1])
    return total


def _cross_first_is_x(x: np.ndarray, y: np.ndarray) -> bool:
    """Orientation rule for the cross-Gram reduction.

    Swapping the arguments transposes the kernel matrix, which would change
    the (order-sensitive) reduction sequence.  Fixing the orientation by row
    count, then by raw bytes, makes the cross mean a function of the unordered
    pair.  When both keys tie the arrays are identical, so the kernel matrix
    is symmetric and either orientation sums the same value sequence.
    """
    if x.shape[0] != y.shape[0]:
        return x.shape[0] > y.shape[0]
    return x.tobytes() <= y.tobytes()


def _cross_gram_sum(x: np.ndarray, y: np.ndarray, inv_two_sigma_sq: float) -> float:
    if _cross_first_is_x(x, y):
        return _gram_sum(x, y, inv_two_sigma_sq)
    return _gram_sum(y, x, inv_two_sigma_sq)


def gram_stats(x, y, params: KernelParams) -> GramStats:
    """Kernel Gram means within x, within y, and across x/y.

    mean_xx and mean_yy average M^2 (resp. N^2) ordered pairs including the
    diagonal, so each is at least 1/M (resp. 1/N).  mean_xy is exactly
    symmetric in the two arguments.
    """
    xa = require_matrix(x, "x")
    ya = require_matrix(y, "y")
    if xa.shape[0] == 0 or ya.shape[0] == 0:
        raise EmptySet("gram_stats requires non-empty sample sets")
    if xa.shape[1] != ya.shape[1]:
        raise DimensionMismatch(
            f"column counts differ: {xa.shape[1]} vs {ya.shape[1]}"
        )
    inv = params.inv_two_sigma_sq
    m = xa.shape[0]
    n = ya.shape[0]
    mean_xx = _gram_sum(xa, xa, inv) / (m * m)
    mean_yy = _gram_sum(ya, ya, inv) / (n * n)
    mean_xy = _cross_gram_sum(xa, ya, inv) / (m * n)
    return GramStats(mean_xx=mean_xx, mean_yy=mean_yy, mean_xy=mean_xy)
