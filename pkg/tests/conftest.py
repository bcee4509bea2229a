"""Shared brute-force oracles and helpers for the test suite.

Every oracle here is written as plain nested loops over scalars, independent
of the library's vectorized code paths, so an agreement test actually compares
two implementations rather than one implementation with itself.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from csalign import RandomSource


# ---------------------------------------------------------------------------
# brute-force Gram / divergence oracles


def naive_sq_dist(a: np.ndarray, b: np.ndarray) -> float:
    """Squared distance accumulated scalar-by-scalar in dimension order."""
    d2 = 0.0
    for d in range(a.shape[0]):
        diff = a[d] - b[d]
        d2 += diff * diff
    return d2


def naive_kernel_sum(a: np.ndarray, b: np.ndarray, sigma: float) -> float:
    """Sum of exp(-||a_i - b_j||^2 / (2 sigma^2)) in row-major order.

    Uses ``np.exp`` on scalars so the transcendental branch matches the
    vectorized library exactly; the accumulation order (i-major, j-minor,
    dims innermost) is the order the library documents.
    """
    inv = 1.0 / (2.0 * sigma * sigma)
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            total += float(np.exp(naive_sq_dist(a[i], b[j]) * -inv))
    return total


def naive_cross_sum(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """Cross-kernel sum in the library's documented orientation.

    The reduction runs over the larger set's rows first; on a row-count tie
    the byte-lexicographically smaller array goes first.
    """
    first_is_x = (
        x.shape[0] > y.shape[0]
        if x.shape[0] != y.shape[0]
        else x.tobytes() <= y.tobytes()
    )
    if first_is_x:
        return naive_kernel_sum(x, y, sigma)
    return naive_kernel_sum(y, x, sigma)


def naive_gram_means(x: np.ndarray, y: np.ndarray, sigma: float):
    m = x.shape[0]
    n = y.shape[0]
    mean_xx = naive_kernel_sum(x, x, sigma) / (m * m)
    mean_yy = naive_kernel_sum(y, y, sigma) / (n * n)
    mean_xy = naive_cross_sum(x, y, sigma) / (m * n)
    return mean_xx, mean_yy, mean_xy


def naive_cs_divergence(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    mean_xx, mean_yy, mean_xy = naive_gram_means(x, y, sigma)
    if mean_xy == 0.0:
        return math.inf
    return math.log(mean_xx) + math.log(mean_yy) - 2.0 * math.log(mean_xy)


# ---------------------------------------------------------------------------
# contrastive-loss oracle


def naive_infonce(x: np.ndarray, y: np.ndarray, tau: float) -> float:
    """Direct two-direction softmax cross-entropy over cosine similarities.

    Deliberately computed without the max-subtraction trick (safe at test
    scale) so it shares no numerics with the library version.
    """
    n = x.shape[0]
    total = 0.0
    for i in range(n):
        xi = x[i] / math.sqrt(float(np.dot(x[i], x[i])))
        row_terms = []
        col_terms = []
        for j in range(n):
            yj = y[j] / math.sqrt(float(np.dot(y[j], y[j])))
            row_terms.append(math.exp(float(np.dot(xi, yj)) / tau))
            xj = x[j] / math.sqrt(float(np.dot(x[j], x[j])))
            yi = y[i] / math.sqrt(float(np.dot(y[i], y[i])))
            col_terms.append(math.exp(float(np.dot(xj, yi)) / tau))
        yi = y[i] / math.sqrt(float(np.dot(y[i], y[i])))
        pos = math.exp(float(np.dot(xi, yi)) / tau)
        total += math.log(pos / sum(row_terms)) + math.log(pos / sum(col_terms))
    return -total / (2.0 * n)


# ---------------------------------------------------------------------------
# retrieval oracle


def naive_recall_at_k(sims: np.ndarray, k: int) -> float:
    """Exhaustive query-side recall@k with ties broken toward lower index.

    A candidate outranks the true match if its score is strictly higher, or
    equal with a smaller index.  Query i's match is column i.
    """
    n = sims.shape[0]
    hits = 0
    for i in range(n):
        rank = 0
        for j in range(n):
            if j == i:
                continue
            if sims[i, j] > sims[i, i] or (sims[i, j] == sims[i, i] and j < i):
                rank += 1
        if rank < k:
            hits += 1
    return hits / n


# ---------------------------------------------------------------------------
# fixtures


@pytest.fixture
def rng():
    return RandomSource(20240811)


def random_matrix(rng: RandomSource, rows: int, cols: int, scale: float = 1.0):
    return scale * rng.normals(rows * cols).reshape(rows, cols)
