"""Cauchy-Schwarz divergence estimates between embedding sets.

The plug-in estimate from samples x_1..x_M ~ p and y_1..y_N ~ q is

    log(mean_xx) + log(mean_yy) - 2 log(mean_xy)

with the Gram means of :func:`csalign.kernels.gram_stats`.  It is symmetric,
non-negative up to rounding, and zero when both sets coincide.  When the two
sets share no kernel mass at all (mean_xy underflows to exactly zero) the
estimate diverges; that case is reported as the distinguished value
``NON_OVERLAPPING`` (= +inf) rather than an exception, since for an estimator
it is an answer, not a failure.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import BatchSizeMismatch, DimensionMismatch, EmptySet, NonOverlappingTokens
from .kernels import KernelParams, gram_stats
from .numerics import require_matrix

#: Distinguished return value: the sets share no kernel mass.
NON_OVERLAPPING = math.inf


def is_non_overlapping(value: float) -> bool:
    """True when a divergence value is the distinguished non-overlap marker."""
    return math.isinf(value) and value > 0


def cs_divergence(x, y, params: KernelParams = KernelParams()) -> float:
    """Divergence estimate log(mean_xx) + log(mean_yy) - 2 log(mean_xy).

    Returns ``NON_OVERLAPPING`` when mean_xy is exactly zero.  Exactly
    symmetric in its arguments, and exactly zero when both arguments are the
    same set.
    """
    stats = gram_stats(x, y, params)
    if stats.mean_xy == 0.0:
        return NON_OVERLAPPING
    return (
        math.log(stats.mean_xx)
        + math.log(stats.mean_yy)
        - 2.0 * math.log(stats.mean_xy)
    )


def cs_divergence_rkhs(x, y, params: KernelParams = KernelParams()) -> float:
    """The same quantity written as -2 log of a kernel-mean cosine.

    -2 log( mean_xy / sqrt(mean_xx * mean_yy) ).  Agrees with
    :func:`cs_divergence` to rounding; kept as an independently-shaped formula
    for cross-checking.
    """
    stats = gram_stats(x, y, params)
    if stats.mean_xy == 0.0:
        return NON_OVERLAPPING
    return -2.0 * math.log(stats.mean_xy / math.sqrt(stats.mean_xx * stats.mean_yy))


def require_token_batch(batch: Sequence, name: str = "batch") -> list[np.ndarray]:
    """Validate a per-sample token batch: non-empty matrices of a common width."""
    mats = [require_matrix(m, f"{name}[{i}]") for i, m in enumerate(batch)]
    for i, m in enumerate(mats):
        if m.shape[0] == 0:
            raise EmptySet(f"{name}[{i}] has no token rows")
    dims = {m.shape[1] for m in mats}
    if len(dims) > 1:
        raise DimensionMismatch(f"{name} mixes token dimensions {sorted(dims)}")
    return mats


def token_cs_loss(
    vision: Sequence, text: Sequence, params: KernelParams = KernelParams()
) -> float:
    """Mean per-sample divergence between token sets.

    ``vision[i]`` and ``text[i]`` are the token embedding matrices of sample
    i; token counts may differ per sample and across modalities.  A sample
    whose two token sets share no kernel mass raises
    :class:`NonOverlappingTokens` carrying that sample's index: inside a loss
    an infinite term is a failure, not an answer.
    """
    if len(vision) != len(text):
        raise BatchSizeMismatch(
            f"batch lengths differ: {len(vision)} vs {len(text)}"
        )
    if len(vision) == 0:
        raise EmptySet("token batches are empty")
    v_mats = require_token_batch(vision, "vision")
    t_mats = require_token_batch(text, "text")
    if v_mats[0].shape[1] != t_mats[0].shape[1]:
        raise DimensionMismatch(
            f"vision dim {v_mats[0].shape[1]} != text dim {t_mats[0].shape[1]}"
        )
    total = 0.0
    for i, (v, t) in enumerate(zip(v_mats, t_mats)):
        value = cs_divergence(v, t, params)
        if is_non_overlapping(value):
            raise NonOverlappingTokens(i)
        total += value
    return total / len(v_mats)
