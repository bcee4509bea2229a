"""Analytic gradients of the losses, and a finite-difference checker.

Gradient code is the easiest place to be quietly wrong, so every formula here
has a numerical counterpart: :func:`finite_difference_check` builds the exact
value function a gradient claims to differentiate and compares coordinate by
coordinate with central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .divergence import cs_divergence, is_non_overlapping, require_token_batch, token_cs_loss
from .errors import (
    BatchSizeMismatch,
    DimensionMismatch,
    EmptySet,
    NonOverlappingError,
    NonOverlappingTokens,
    ZeroNormRow,
)
from .kernels import KernelParams, _cross_first_is_x, kernel_matrix
from .losses import LossConfig, _check_unit_rows, _infonce_value, _require_pair
from .numerics import ZERO_NORM_EPS, l2_normalize_rows, require_matrix, row_norms

#: Coordinates where both analytic and numeric magnitudes fall below this are
#: skipped by the checker (relative error is meaningless at that scale).
_NEGLIGIBLE = 1e-8


@dataclass(frozen=True)
class GradientPair:
    """Gradients with respect to the two embedding matrices of a loss."""

    d_x: np.ndarray
    d_y: np.ndarray


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of a finite-difference comparison."""

    max_rel_err: float
    worst: tuple[str, int, int]  # (input name, row, col)
    step: float
    coords_checked: int


def _grad_cs_oriented(
    a: np.ndarray, b: np.ndarray, params: KernelParams
) -> tuple[np.ndarray, np.ndarray]:
    """Divergence gradient for a fixed argument orientation.

    With W = K(a,a)/sum, Wb = K(b,b)/sum, V = K(a,b)/sum:
      d_a = (2/sigma^2) [ (rowsum(V) - rowsum(W)) * a + W a - V b ]
      d_b = (2/sigma^2) [ (colsum(V) - rowsum(Wb)) * b + Wb b - V^T a ]
    which is the chain rule through each kernel entry
    d kernel(u, v)/du = -((u - v)/sigma^2) * kernel(u, v).
    """
    k_aa = kernel_matrix(a, a, params)
    k_bb = kernel_matrix(b, b, params)
    k_ab = kernel_matrix(a, b, params)
    s_ab = k_ab.sum()
    if s_ab == 0.0:
        raise NonOverlappingError("sets share no kernel mass; gradient undefined")
    w_aa = k_aa / k_aa.sum()
    w_bb = k_bb / k_bb.sum()
    v_ab = k_ab / s_ab
    coef = 2.0 / (params.sigma * params.sigma)
    d_a = coef * (
        (v_ab.sum(axis=1) - w_aa.sum(axis=1))[:, None] * a + w_aa @ a - v_ab @ b
    )
    d_b = coef * (
        (v_ab.sum(axis=0) - w_bb.sum(axis=1))[:, None] * b + w_bb @ b - v_ab.T @ a
    )
    return d_a, d_b


def grad_cs(x, y, params: KernelParams = KernelParams()) -> GradientPair:
    """Gradient of :func:`csalign.divergence.cs_divergence` in both arguments.

    Computed in a fixed argument orientation (the same one the estimator's
    cross-Gram uses), so swapping x and y swaps d_x and d_y bit for bit.
    Raises :class:`NonOverlappingError` where the divergence is infinite.
    """
    xa = require_matrix(x, "x")
    ya = require_matrix(y, "y")
    if xa.shape[0] == 0 or ya.shape[0] == 0:
        raise EmptySet("grad_cs requires non-empty sample sets")
    if xa.shape[1] != ya.shape[1]:
        raise DimensionMismatch(
            f"column counts differ: {xa.shape[1]} vs {ya.shape[1]}"
        )
    if _cross_first_is_x(xa, ya):
        d_x, d_y = _grad_cs_oriented(xa, ya, params)
        return GradientPair(d_x=d_x, d_y=d_y)
    d_y, d_x = _grad_cs_oriented(ya, xa, params)
    return GradientPair(d_x=d_x, d_y=d_y)


def grad_normalize_chain(raw, upstream) -> np.ndarray:
    """Back-propagate a gradient through row-wise unit normalization.

    Given a gradient with respect to normalized rows u_i = v_i / ||v_i||,
    returns the gradient with respect to the raw rows v_i:
    (g - (g . u) u) / ||v||, i.e. project out the radial component, then
    rescale.  Output rows are orthogonal to the normalized rows.
    """
    ra = require_matrix(raw, "raw")
    ua = require_matrix(upstream, "upstream")
    if ra.shape != ua.shape:
        raise DimensionMismatch(
            f"shapes differ: {ra.shape} vs {ua.shape}"
        )
    norms = row_norms(ra)
    small = np.flatnonzero(norms <= ZERO_NORM_EPS)
    if small.size:
        row = int(small[0])
        raise ZeroNormRow(row, float(norms[row]))
    unit = ra / norms[:, None]
    radial = (ua * unit).sum(axis=1)
    return (ua - radial[:, None] * unit) / norms[:, None]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    peak = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - peak)
    return e / e.sum(axis=1, keepdims=True)


def _infonce_upstream(nx: np.ndarray, ny: np.ndarray, tau: float) -> np.ndarray:
    """d loss / d similarity-matrix for the symmetric InfoNCE loss.

    (row_softmax + col_softmax - 2 I) / (2 N tau), evaluated at the cosine
    matrix of unit rows nx, ny.
    """
    logits = (nx @ ny.T) / tau
    g = _softmax_rows(logits) + _softmax_rows(logits.T).T
    np.fill_diagonal(g, g.diagonal() - 2.0)
    return g / (2.0 * nx.shape[0] * tau)


def _grad_infonce_any(
    x: np.ndarray, y: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """InfoNCE gradient for arbitrary (not necessarily unit-norm) rows."""
    nx = x / row_norms(x)[:, None]
    ny = y / row_norms(y)[:, None]
    g = _infonce_upstream(nx, ny, tau)
    return grad_normalize_chain(x, g @ ny), grad_normalize_chain(y, g.T @ nx)


def grad_infonce(x, y, tau: float = 0.07) -> GradientPair:
    """Gradient of :func:`csalign.losses.infonce` in both embedding matrices.

    Includes the chain through the cosine's normalization, so it is valid as
    a gradient with respect to the raw rows.  Inputs must satisfy the same
    unit-norm contract as the loss itself.
    """
    if not (tau > 0.0 and math.isfinite(tau)):
        raise ValueError(f"tau must be positive and finite, got {tau!r}")
    xa, ya = _require_pair(x, y)
    _check_unit_rows(xa, "x")
    _check_unit_rows(ya, "y")
    d_x, d_y = _grad_infonce_any(xa, ya, tau)
    return GradientPair(d_x=d_x, d_y=d_y)


def _pool_unpaired(
    paired: np.ndarray, unpaired, name: str
) -> np.ndarray:
    if unpaired is None:
        return paired
    ua = require_matrix(unpaired, name)
    if ua.shape[1] != paired.shape[1]:
        raise DimensionMismatch(
            f"{name} has {ua.shape[1]} columns, expected {paired.shape[1]}"
        )
    if ua.shape[0] == 0:
        return paired
    return np.vstack([paired, ua])


def objective_value(
    x, y, config: LossConfig = LossConfig(), unpaired_x=None, unpaired_y=None
) -> float:
    """The combined objective as a function of *raw* embeddings.

    Normalizes every row (paired and unpaired), then evaluates
    infonce + cs_weight * divergence over the pooled sets.  This is the exact
    scalar function :func:`grad_objective` differentiates.
    """
    xa, ya = _require_pair(x, y)
    x_all = _pool_unpaired(xa, unpaired_x, "unpaired_x")
    y_all = _pool_unpaired(ya, unpaired_y, "unpaired_y")
    nx_all = l2_normalize_rows(x_all)
    ny_all = l2_normalize_rows(y_all)
    n = xa.shape[0]
    value_inf = _infonce_value(nx_all[:n], ny_all[:n], config.tau)
    value_cs = cs_divergence(nx_all, ny_all, KernelParams(sigma=config.sigma))
    if is_non_overlapping(value_cs):
        raise NonOverlappingError(
            "pooled sets share no kernel mass; objective is infinite"
        )
    return value_inf + config.cs_weight * value_cs


def grad_objective(
    x, y, config: LossConfig = LossConfig(), unpaired_x=None, unpaired_y=None
) -> GradientPair:
    """Gradient of :func:`objective_value` with respect to the raw embeddings.

    ``d_x`` stacks the paired rows first, then any unpaired rows (same for
    ``d_y``).  The contrastive part touches only the paired block; the
    divergence part touches everything; both are chained through the row
    normalization in one pass, which keeps the result linear in
    ``config.cs_weight``.
    """
    xa, ya = _require_pair(x, y)
    x_all = _pool_unpaired(xa, unpaired_x, "unpaired_x")
    y_all = _pool_unpaired(ya, unpaired_y, "unpaired_y")
    nx_all = l2_normalize_rows(x_all)
    ny_all = l2_normalize_rows(y_all)
    n = xa.shape[0]

    g_cs = grad_cs(nx_all, ny_all, KernelParams(sigma=config.sigma))
    up_x = config.cs_weight * g_cs.d_x
    up_y = config.cs_weight * g_cs.d_y

    g = _infonce_upstream(nx_all[:n], ny_all[:n], config.tau)
    up_x[:n] += g @ ny_all[:n]
    up_y[:n] += g.T @ nx_all[:n]

    return GradientPair(
        d_x=grad_normalize_chain(x_all, up_x),
        d_y=grad_normalize_chain(y_all, up_y),
    )


def grad_token_cs(
    vision: Sequence, text: Sequence, params: KernelParams = KernelParams()
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-sample gradients of :func:`csalign.divergence.token_cs_loss`.

    Returns one gradient matrix per sample and modality, each scaled by 1/B
    for the batch mean.
    """
    if len(vision) != len(text):
        raise BatchSizeMismatch(
            f"batch lengths differ: {len(vision)} vs {len(text)}"
        )
    if len(vision) == 0:
        raise EmptySet("token batches are empty")
    v_mats = require_token_batch(vision, "vision")
    t_mats = require_token_batch(text, "text")
    scale = 1.0 / len(v_mats)
    d_vision: list[np.ndarray] = []
    d_text: list[np.ndarray] = []
    for i, (v, t) in enumerate(zip(v_mats, t_mats)):
        try:
            g = grad_cs(v, t, params)
        except NonOverlappingError:
            raise NonOverlappingTokens(i) from None
        d_vision.append(scale * g.d_x)
        d_text.append(scale * g.d_y)
    return d_vision, d_text


def finite_difference_report(
    value_fn: Callable[[], float],
    inputs: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients against central differences of ``value_fn``.

    ``value_fn`` must read the arrays in ``inputs`` (they are perturbed in
    place and restored).  Coordinates where both sides are below 1e-8 in
    magnitude are skipped.  Relative error uses
    |a - n| / max(|a|, |n|, 1e-8).
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step must lie in [1e-7, 1e-3], got {step!r}")
    if set(inputs) != set(analytic):
        raise ValueError("inputs and analytic gradients must cover the same names")
    max_rel = 0.0
    worst = ("", -1, -1)
    checked = 0
    for name in inputs:
        base = inputs[name]
        grad = analytic[name]
        if base.shape != grad.shape:
            raise DimensionMismatch(
                f"gradient shape {grad.shape} != input shape {base.shape} for {name!r}"
            )
        for r in range(base.shape[0]):
            for c in range(base.shape[1]):
                orig = base[r, c]
                base[r, c] = orig + step
                f_plus = value_fn()
                base[r, c] = orig - step
                f_minus = value_fn()
                base[r, c] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                a = float(grad[r, c])
                if abs(a) < _NEGLIGIBLE and abs(numeric) < _NEGLIGIBLE:
                    continue
                rel = abs(a - numeric) / max(abs(a), abs(numeric), _NEGLIGIBLE)
                checked += 1
                if rel > max_rel:
                    max_rel = rel
                    worst = (name, r, c)
    return GradCheckReport(
        max_rel_err=max_rel, worst=worst, step=step, coords_checked=checked
    )


def finite_difference_check(loss_id: str, inputs, params=None, step: float = 1e-5) -> GradCheckReport:
    """Check one loss's analytic gradient numerically.

    loss_id selects the loss and fixes the meaning of the other arguments:

    - ``"cs"``:        inputs (x, y), params a :class:`KernelParams`
    - ``"infonce"``:   inputs (x, y), params the temperature (float)
    - ``"objective"``: inputs (x, y) or (x, y, unpaired_x, unpaired_y),
                       params a :class:`LossConfig`
    - ``"token"``:     inputs (vision_batch, text_batch), params a
                       :class:`KernelParams`

    For ``infonce`` and ``objective`` the inputs are treated as raw
    (pre-normalization) rows, so they need not be unit-norm.
    """
    if loss_id == "cs":
        kp = params if params is not None else KernelParams()
        x = require_matrix(inputs[0], "x").copy()
        y = require_matrix(inputs[1], "y").copy()
        g = grad_cs(x, y, kp)
        arrays = {"x": x, "y": y}
        grads = {"x": g.d_x, "y": g.d_y}
        return finite_difference_report(
            lambda: cs_divergence(arrays["x"], arrays["y"], kp), arrays, grads, step
        )
    if loss_id == "infonce":
        tau = float(params) if params is not None else 0.07
        x = require_matrix(inputs[0], "x").copy()
        y = require_matrix(inputs[1], "y").copy()
        d_x, d_y = _grad_infonce_any(x, y, tau)
        arrays = {"x": x, "y": y}
        grads = {"x": d_x, "y": d_y}

        def value() -> float:
            nx = l2_normalize_rows(arrays["x"])
            ny = l2_normalize_rows(arrays["y"])
            return _infonce_value(nx, ny, tau)

        return finite_difference_report(value, arrays, grads, step)
    if loss_id == "objective":
        cfg = params if params is not None else LossConfig()
        x = require_matrix(inputs[0], "x").copy()
        y = require_matrix(inputs[1], "y").copy()
        ux = uy = None
        if len(inputs) > 2 and inputs[2] is not None:
            ux = require_matrix(inputs[2], "unpaired_x").copy()
        if len(inputs) > 3 and inputs[3] is not None:
            uy = require_matrix(inputs[3], "unpaired_y").copy()
        g = grad_objective(x, y, cfg, ux, uy)
        n = x.shape[0]
        arrays = {"x": x, "y": y}
        grads = {"x": g.d_x[:n], "y": g.d_y[:n]}
        if ux is not None:
            arrays["unpaired_x"] = ux
            grads["unpaired_x"] = g.d_x[n:]
        if uy is not None:
            arrays["unpaired_y"] = uy
            grads["unpaired_y"] = g.d_y[n:]

        def value() -> float:
            return objective_value(
                arrays["x"],
                arrays["y"],
                cfg,
                arrays.get("unpaired_x"),
                arrays.get("unpaired_y"),
            )

        return finite_difference_report(value, arrays, grads, step)
    if loss_id == "token":
        kp = params if params is not None else KernelParams()
        vision = [require_matrix(m, f"vision[{i}]").copy() for i, m in enumerate(inputs[0])]
        text = [require_matrix(m, f"text[{i}]").copy() for i, m in enumerate(inputs[1])]
        d_v, d_t = grad_token_cs(vision, text, kp)
        arrays: dict[str, np.ndarray] = {}
        grads: dict[str, np.ndarray] = {}
        for i, (m, g_m) in enumerate(zip(vision, d_v)):
            arrays[f"vision[{i}]"] = m
            grads[f"vision[{i}]"] = g_m
        for i, (m, g_m) in enumerate(zip(text, d_t)):
            arrays[f"text[{i}]"] = m
            grads[f"text[{i}]"] = g_m
        return finite_difference_report(
            lambda: token_cs_loss(vision, text, kp), arrays, grads, step
        )
    raise ValueError(f"unknown loss id {loss_id!r}")
