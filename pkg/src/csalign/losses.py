"""Contrastive and geometric loss terms, and the combined training objective.

The combined objective is a symmetric InfoNCE term over paired embeddings
plus a weighted set-level Cauchy-Schwarz divergence.  The divergence term
also accepts extra *unpaired* rows: samples that have no partner still shape
the two distributions being matched.

``decomposed_objective`` regroups the large-temperature expansion of that
objective into alignment + cross-uniformity + divergence; the regrouped total
and the direct sum agree to rounding, which the tests pin down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .divergence import cs_divergence, is_non_overlapping
from .errors import (
    DimensionMismatch,
    EmptySet,
    NonOverlappingError,
    NotNormalized,
    PairCountMismatch,
)
from .kernels import KernelParams
from .numerics import pairwise_sq_dists, require_matrix, row_norms

#: Unit-norm tolerance for inputs contractually required to be normalized.
NORM_TOL = 1e-6


@dataclass(frozen=True)
class LossConfig:
    """Weights of the combined objective.

    tau        softmax temperature of the contrastive term (fixed, not learned)
    cs_weight  coefficient on the divergence term; 0 disables it
    alpha      exponent of the alignment distance
    sigma      kernel width of the divergence term
    """

    tau: float = 0.07
    cs_weight: float = 0.01
    alpha: float = 2.0
    sigma: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau!r}")
        if not (self.cs_weight >= 0.0 and math.isfinite(self.cs_weight)):
            raise ValueError(f"cs_weight must be >= 0, got {self.cs_weight!r}")
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")


@dataclass(frozen=True)
class LossReport:
    """A loss value with whichever components the producing call computed."""

    total: float
    infonce: float | None = None
    cs: float | None = None
    alignment: float | None = None
    uniformity_x: float | None = None
    uniformity_y: float | None = None
    cross_uniformity: float | None = None
    token: float | None = None


def _require_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    xa = require_matrix(x, "x")
    ya = require_matrix(y, "y")
    if xa.shape[1] != ya.shape[1]:
        raise DimensionMismatch(
            f"column counts differ: {xa.shape[1]} vs {ya.shape[1]}"
        )
    if xa.shape[0] != ya.shape[0]:
        raise PairCountMismatch(
            f"paired inputs have {xa.shape[0]} and {ya.shape[0]} rows"
        )
    if xa.shape[0] == 0:
        raise EmptySet("paired inputs are empty")
    return xa, ya


def _check_unit_rows(m: np.ndarray, name: str) -> None:
    norms = row_norms(m)
    bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
    if bad.size:
        row = int(bad[0])
        raise NotNormalized(row, float(norms[row]))


def _logsumexp_rows(logits: np.ndarray) -> np.ndarray:
    peak = logits.max(axis=1)
    return peak + np.log(np.exp(logits - peak[:, None]).sum(axis=1))


def _infonce_value(x: np.ndarray, y: np.ndarray, tau: float) -> float:
    """Symmetric InfoNCE on cosine similarities; no unit-norm guard.

    Kept separate from :func:`infonce` so numerical probes (finite
    differences) can perturb inputs freely; the cosine normalizes anyway.
    """
    n = x.shape[0]
    nx = x / row_norms(x)[:, None]
    ny = y / row_norms(y)[:, None]
    logits = (nx @ ny.T) / tau
    diag = np.diag(logits)
    row_term = diag - _logsumexp_rows(logits)
    col_term = diag - _logsumexp_rows(logits.T)
    return -(float(row_term.sum()) + float(col_term.sum())) / (2.0 * n)


def infonce(x, y, tau: float = 0.07) -> float:
    """Symmetric InfoNCE loss over paired unit-norm embeddings.

    Each sample scores its true partner against all partners in the batch,
    in both directions.  Non-negative; log(N) when every row is identical;
    rows must be unit-norm within 1e-6.
    """
    if not (tau > 0.0 and math.isfinite(tau)):
        raise ValueError(f"tau must be positive and finite, got {tau!r}")
    xa, ya = _require_pair(x, y)
    _check_unit_rows(xa, "x")
    _check_unit_rows(ya, "y")
    return _infonce_value(xa, ya, tau)


def _paired_sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x - y
    return (d * d).sum(axis=1)


def alignment_term(x, y, alpha: float = 2.0) -> float:
    """Mean alpha-th power of paired distances: (1/N) sum ||x_i - y_i||^alpha."""
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    xa, ya = _require_pair(x, y)
    # Powers of the squared distance keep alpha=2 bitwise equal to prior_l2.
    return float(np.mean(_paired_sq_dists(xa, ya) ** (alpha / 2.0)))


def prior_l2(x, y) -> float:
    """Mean squared paired distance — the plain L2 matching penalty."""
    xa, ya = _require_pair(x, y)
    return float(np.mean(_paired_sq_dists(xa, ya)))


def uniformity_term(x, y, t: float = 1.0) -> float:
    """log mean exp(-t ||x_i - y_j||^2) over all cross pairs.

    Always <= 0; equals 0 exactly when every x row coincides with every y
    row.  With x = y this is the (self-pair-inclusive) uniformity of one set.
    """
    if not (t > 0.0 and math.isfinite(t)):
        raise ValueError(f"t must be positive, got {t!r}")
    xa = require_matrix(x, "x")
    ya = require_matrix(y, "y")
    if xa.shape[0] == 0 or ya.shape[0] == 0:
        raise EmptySet("uniformity_term requires non-empty sets")
    if xa.shape[1] != ya.shape[1]:
        raise DimensionMismatch(
            f"column counts differ: {xa.shape[1]} vs {ya.shape[1]}"
        )
    return float(np.log(np.mean(np.exp(-t * pairwise_sq_dists(xa, ya)))))


def uniformity_taylor(x, y, t: float = 1.0) -> float:
    """First-order expansion of :func:`uniformity_term`: -t * mean ||x_i - y_j||^2.

    Never exceeds the exact term (Jensen), and tight as t -> 0.
    """
    if not (t > 0.0 and math.isfinite(t)):
        raise ValueError(f"t must be positive, got {t!r}")
    xa = require_matrix(x, "x")
    ya = require_matrix(y, "y")
    if xa.shape[0] == 0 or ya.shape[0] == 0:
        raise EmptySet("uniformity_taylor requires non-empty sets")
    if xa.shape[1] != ya.shape[1]:
        raise DimensionMismatch(
            f"column counts differ: {xa.shape[1]} vs {ya.shape[1]}"
        )
    return float(-t * np.mean(pairwise_sq_dists(xa, ya)))


def cs_aligner_objective(
    x,
    y,
    config: LossConfig = LossConfig(),
    unpaired_x=None,
    unpaired_y=None,
) -> LossReport:
    """InfoNCE plus weighted set divergence: total = infonce + cs_weight * cs.

    The divergence is computed over the paired rows pooled with any unpaired
    rows, so embeddings without partners still pull the two sets together.
    Raises :class:`NonOverlappingError` if the pooled sets share no kernel
    mass — inside an objective that value would be infinite.
    """
    xa, ya = _require_pair(x, y)
    _check_unit_rows(xa, "x")
    _check_unit_rows(ya, "y")
    value_inf = _infonce_value(xa, ya, config.tau)

    pool_x, pool_y = xa, ya
    if unpaired_x is not None:
        ux = require_matrix(unpaired_x, "unpaired_x")
        if ux.shape[1] != xa.shape[1]:
            raise DimensionMismatch(
                f"unpaired_x has {ux.shape[1]} columns, expected {xa.shape[1]}"
            )
        if ux.shape[0]:
            pool_x = np.vstack([xa, ux])
    if unpaired_y is not None:
        uy = require_matrix(unpaired_y, "unpaired_y")
        if uy.shape[1] != ya.shape[1]:
            raise DimensionMismatch(
                f"unpaired_y has {uy.shape[1]} columns, expected {ya.shape[1]}"
            )
        if uy.shape[0]:
            pool_y = np.vstack([ya, uy])

    value_cs = cs_divergence(pool_x, pool_y, KernelParams(sigma=config.sigma))
    if is_non_overlapping(value_cs):
        raise NonOverlappingError(
            "pooled sets share no kernel mass; divergence term is infinite"
        )
    return LossReport(
        total=value_inf + config.cs_weight * value_cs,
        infonce=value_inf,
        cs=value_cs,
    )


def decomposed_objective(x, y, t: float = 1.0, alpha: float = 2.0) -> LossReport:
    """Alignment/uniformity regrouping of the large-temperature objective.

    total = alignment - cross_uniformity + uniformity_x + uniformity_y.
    The report's ``cs`` field carries the regrouped divergence
    uniformity_x + uniformity_y - 2 * cross_uniformity, which equals the
    sample divergence at kernel width sigma = 1/sqrt(2 t).
    """
    xa, ya = _require_pair(x, y)
    align = alignment_term(xa, ya, alpha)
    cross = uniformity_term(xa, ya, t)
    self_x = uniformity_term(xa, xa, t)
    self_y = uniformity_term(ya, ya, t)
    return LossReport(
        total=align - cross + self_x + self_y,
        alignment=align,
        cross_uniformity=cross,
        uniformity_x=self_x,
        uniformity_y=self_y,
        cs=self_x + self_y - 2.0 * cross,
    )
