"""Mini-batch training of embedding adapters against the combined objective.

The trainer fits small adapter networks (identity-initialized linear maps, or
two-layer tanh MLPs) on top of frozen embeddings, under one of six regimes:

- ``infonce_only``            contrastive term alone
- ``cs_only``                 set divergence alone
- ``combined``                infonce + cs_weight * divergence
- ``combined_unpaired``       combined, divergence pooled with unpaired rows
- ``combined_multicaption``   combined, divergence pooled over all captions
- ``combined_token``          combined plus a token-level divergence term

All randomness (adapter init, batch order) comes from one derived seed
stream, and no regime consumes draws conditionally, so runs that share a seed
shuffle identically — which is what makes e.g. a zero-weight combined run
bit-identical to an infonce-only run.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .datagen import MultiCaptionDataset, PairedDataset, UnpairedPool
from .divergence import cs_divergence, require_token_batch, token_cs_loss
from .errors import (
    BatchSizeMismatch,
    DimensionMismatch,
    NonOverlappingError,
    PairCountMismatch,
    TrainingAborted,
)
from .gradients import grad_normalize_chain, grad_token_cs
from .kernels import KernelParams, kernel_matrix
from .losses import LossConfig
from .numerics import RandomSource, derive_seed, l2_normalize_rows, require_matrix

_STREAM_TRAIN = 4

REGIMES = (
    "infonce_only",
    "cs_only",
    "combined",
    "combined_unpaired",
    "combined_multicaption",
    "combined_token",
)

_ADAPTER_KINDS = ("linear", "two_layer")


@dataclass
class AdapterParams:
    """Adapter weights: one (W, b) pair per layer.

    ``linear`` has a single affine layer; ``two_layer`` applies tanh between
    two affine layers.
    """

    kind: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        """All trainable arrays, in a fixed order (layer by layer, W then b)."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_adapter(
    kind: str, in_dim: int, out_dim: int, hidden: int, rng: RandomSource
) -> AdapterParams:
    """Build an adapter; a square linear adapter starts as the identity map."""
    if kind not in _ADAPTER_KINDS:
        raise ValueError(f"adapter kind must be one of {_ADAPTER_KINDS}, got {kind!r}")
    if in_dim < 1 or out_dim < 1 or hidden < 1:
        raise ValueError("adapter dimensions must be >= 1")
    if kind == "linear":
        if in_dim == out_dim:
            w = np.eye(in_dim)
        else:
            w = rng.normals(in_dim * out_dim, std=1.0 / math.sqrt(in_dim)).reshape(
                in_dim, out_dim
            )
        return AdapterParams(kind=kind, weights=[w], biases=[np.zeros(out_dim)])
    w1 = rng.normals(in_dim * hidden, std=1.0 / math.sqrt(in_dim)).reshape(
        in_dim, hidden
    )
    w2 = rng.normals(hidden * out_dim, std=1.0 / math.sqrt(hidden)).reshape(
        hidden, out_dim
    )
    return AdapterParams(
        kind=kind, weights=[w1, w2], biases=[np.zeros(hidden), np.zeros(out_dim)]
    )


def adapter_forward(params: AdapterParams, m) -> np.ndarray:
    arr = require_matrix(m, "adapter input")
    if arr.shape[1] != params.in_dim:
        raise DimensionMismatch(
            f"adapter expects {params.in_dim} columns, got {arr.shape[1]}"
        )
    if params.kind == "linear":
        return arr @ params.weights[0] + params.biases[0]
    hidden = np.tanh(arr @ params.weights[0] + params.biases[0])
    return hidden @ params.weights[1] + params.biases[1]


def _adapter_backward(
    params: AdapterParams, m: np.ndarray, d_out: np.ndarray
) -> list[np.ndarray]:
    """Gradients for every adapter array, in :meth:`AdapterParams.arrays` order."""
    if params.kind == "linear":
        return [m.T @ d_out, d_out.sum(axis=0)]
    pre = m @ params.weights[0] + params.biases[0]
    hidden = np.tanh(pre)
    d_hidden = d_out @ params.weights[1].T
    d_pre = d_hidden * (1.0 - hidden * hidden)
    return [
        m.T @ d_pre,
        d_pre.sum(axis=0),
        hidden.T @ d_out,
        d_out.sum(axis=0),
    ]


class AdamState:
    """Adam with the standard constants (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, params: list[np.ndarray], learning_rate: float):
        self.params = params
        self.lr = learning_rate
        self.first = [np.zeros_like(p) for p in params]
        self.second = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        bias1 = 1.0 - 0.9**self.t
        bias2 = 1.0 - 0.999**self.t
        for p, g, m, v in zip(self.params, grads, self.first, self.second):
            m *= 0.9
            m += 0.1 * g
            v *= 0.999
            v += 0.001 * (g * g)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + 1e-8)


@dataclass(frozen=True)
class TrainConfig:
    """Everything that defines a training run (data excluded)."""

    regime: str = "combined"
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 0.01
    loss: LossConfig = field(default_factory=LossConfig)
    adapt_side: str = "y"
    adapter_kind: str = "linear"
    adapter_hidden: int = 32
    eval_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if not (self.learning_rate > 0.0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if self.adapt_side not in ("x", "y", "both"):
            raise ValueError(f"adapt_side must be 'x', 'y', or 'both', got {self.adapt_side!r}")
        if self.adapter_kind not in _ADAPTER_KINDS:
            raise ValueError(f"adapter_kind must be one of {_ADAPTER_KINDS}")
        if self.adapter_hidden < 1:
            raise ValueError("adapter_hidden must be >= 1")
        if not (0.0 < self.eval_fraction <= 0.5):
            raise ValueError(
                f"eval_fraction must lie in (0, 0.5], got {self.eval_fraction!r}"
            )


@dataclass(frozen=True)
class MetricsRow:
    """End-of-epoch record: mean step losses plus held-out evaluation."""

    epoch: int
    loss_total: float
    loss_infonce: float | None
    loss_cs: float | None
    loss_token: float | None
    eval_cs_divergence: float
    recall_at_1: float
    recall_at_5: float
    mean_embedding_gap: float


@dataclass
class TrainedAdapters:
    """The adapters a run produced; sides that were not adapted are None."""

    x: AdapterParams | None
    y: AdapterParams | None


@dataclass(frozen=True)
class SweepRow:
    cs_weight: float
    sigma: float
    final_eval_cs: float
    final_recall_at_1: float


def evaluate_retrieval(x, y, k: int) -> tuple[float, float]:
    """Recall@k of cross-modal retrieval, both directions.

    Candidates are ranked by cosine similarity; equal scores are broken in
    favor of the lower index (so a tie with the true partner only counts
    against it when the competitor precedes it).  Returns
    (x-to-y recall, y-to-x recall).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    xa = require_matrix(x, "x")
    ya = require_matrix(y, "y")
    if xa.shape[0] != ya.shape[0]:
        raise PairCountMismatch(
            f"paired inputs have {xa.shape[0]} and {ya.shape[0]} rows"
        )
    if xa.shape[0] == 0:
        raise ValueError("cannot evaluate retrieval on an empty set")
    n = xa.shape[0]
    nx = l2_normalize_rows(xa)
    ny = l2_normalize_rows(ya)
    sims = nx @ ny.T
    diag = sims.diagonal()
    order = np.arange(n)
    # rank of the true partner = strictly-better competitors, plus equal
    # competitors with a lower index
    rank_x2y = (sims > diag[:, None]).sum(axis=1) + (
        (sims == diag[:, None]) & (order[None, :] < order[:, None])
    ).sum(axis=1)
    rank_y2x = (sims > diag[None, :]).sum(axis=0) + (
        (sims == diag[None, :]) & (order[:, None] < order[None, :])
    ).sum(axis=0)
    return float((rank_x2y < k).mean()), float((rank_y2x < k).mean())


def _infonce_value_and_upstream(
    nx: np.ndarray, ny: np.ndarray, tau: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss value and gradients w.r.t. the unit rows, sharing one logit pass."""
    n = nx.shape[0]
    logits = (nx @ ny.T) / tau
    peak_r = logits.max(axis=1)
    lse_r = peak_r + np.log(np.exp(logits - peak_r[:, None]).sum(axis=1))
    peak_c = logits.max(axis=0)
    lse_c = peak_c + np.log(np.exp(logits - peak_c[None, :]).sum(axis=0))
    diag = logits.diagonal()
    value = -(float((diag - lse_r).sum()) + float((diag - lse_c).sum())) / (2.0 * n)
    g = np.exp(logits - lse_r[:, None]) + np.exp(logits - lse_c[None, :])
    np.fill_diagonal(g, g.diagonal() - 2.0)
    g /= 2.0 * n * tau
    return value, g @ ny, g.T @ nx


def _cs_value_and_upstream(
    nx: np.ndarray, ny: np.ndarray, sigma: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Divergence value and gradients w.r.t. the rows, sharing kernel matrices.

    The value here reduces kernel sums in numpy's default order, so it can
    differ from :func:`csalign.divergence.cs_divergence` in the last bits;
    evaluation metrics use the canonical estimator, this one feeds training.
    """
    params = KernelParams(sigma=sigma)
    k_xx = kernel_matrix(nx, nx, params)
    k_yy = kernel_matrix(ny, ny, params)
    k_xy = kernel_matrix(nx, ny, params)
    s_xx = k_xx.sum()
    s_yy = k_yy.sum()
    s_xy = k_xy.sum()
    if s_xy == 0.0:
        raise NonOverlappingError("batch sets share no kernel mass")
    m, n = k_xy.shape
    value = (
        math.log(s_xx / (m * m)) + math.log(s_yy / (n * n)) - 2.0 * math.log(s_xy / (m * n))
    )
    w_xx = k_xx / s_xx
    w_yy = k_yy / s_yy
    v_xy = k_xy / s_xy
    coef = 2.0 / (sigma * sigma)
    d_nx = coef * (
        (v_xy.sum(axis=1) - w_xx.sum(axis=1))[:, None] * nx + w_xx @ nx - v_xy @ ny
    )
    d_ny = coef * (
        (v_xy.sum(axis=0) - w_yy.sum(axis=1))[:, None] * ny + w_yy @ ny - v_xy.T @ nx
    )
    return value, d_nx, d_ny


def _take_cyclic(pool: np.ndarray, pos: int, count: int) -> tuple[np.ndarray, int]:
    """Next ``count`` rows of a pool, wrapping around; advances the cursor."""
    if pool.shape[0] == 0 or count <= 0:
        return pool[:0], pos
    idx = (pos + np.arange(count)) % pool.shape[0]
    return pool[idx], pos + count


class _Side:
    """One modality's (possibly absent) adapter plus its step buffers."""

    def __init__(self, adapter: AdapterParams | None):
        self.adapter = adapter
        self.inputs: list[np.ndarray] = []
        self.d_outs: list[np.ndarray] = []

    def forward(self, raw: np.ndarray) -> np.ndarray:
        if self.adapter is None:
            return raw
        return adapter_forward(self.adapter, raw)

    def record(self, raw: np.ndarray, d_out: np.ndarray) -> None:
        if self.adapter is not None:
            self.inputs.append(raw)
            self.d_outs.append(d_out)

    def grads(self) -> list[np.ndarray]:
        if self.adapter is None:
            return []
        m = np.vstack(self.inputs) if len(self.inputs) > 1 else self.inputs[0]
        d = np.vstack(self.d_outs) if len(self.d_outs) > 1 else self.d_outs[0]
        self.inputs = []
        self.d_outs = []
        return _adapter_backward(self.adapter, m, d)

    def reset(self) -> None:
        self.inputs = []
        self.d_outs = []


def _validate_extras(config: TrainConfig, data: PairedDataset, extras, n: int):
    """Check that ``extras`` matches what the regime needs; returns it typed."""
    regime = config.regime
    if regime == "combined_unpaired":
        if not isinstance(extras, UnpairedPool):
            raise ValueError("combined_unpaired requires extras=UnpairedPool")
        ux = require_matrix(extras.extra_x, "extra_x")
        uy = require_matrix(extras.extra_y, "extra_y")
        if ux.shape[1] != data.x.shape[1] or uy.shape[1] != data.y.shape[1]:
            raise DimensionMismatch("unpaired pool dimensions do not match the data")
        return UnpairedPool(extra_x=ux, extra_y=uy)
    if regime == "combined_multicaption":
        if not isinstance(extras, MultiCaptionDataset):
            raise ValueError("combined_multicaption requires extras=MultiCaptionDataset")
        if len(extras.captions) != n:
            raise PairCountMismatch(
                f"captions cover {len(extras.captions)} samples, data has {n}"
            )
        captions = require_token_batch(extras.captions, "captions")
        if captions[0].shape[1] != data.y.shape[1]:
            raise DimensionMismatch("caption dimension does not match y")
        return captions
    if regime == "combined_token":
        if not (isinstance(extras, tuple) and len(extras) == 2):
            raise ValueError("combined_token requires extras=(vision_batch, text_batch)")
        vision = require_token_batch(extras[0], "vision")
        text = require_token_batch(extras[1], "text")
        if len(vision) != n or len(text) != n:
            raise BatchSizeMismatch(
                f"token batches cover {len(vision)}/{len(text)} samples, data has {n}"
            )
        if vision[0].shape[1] != data.x.shape[1]:
            raise DimensionMismatch("vision token dimension does not match x")
        if text[0].shape[1] != data.y.shape[1]:
            raise DimensionMismatch("text token dimension does not match y")
        return vision, text
    if extras is not None:
        raise ValueError(f"regime {regime!r} takes no extras")
    return None


def train(
    config: TrainConfig, data: PairedDataset, extras=None
) -> tuple[TrainedAdapters, list[MetricsRow]]:
    """Fit adapters for ``config.epochs`` epochs; returns them with per-epoch metrics.

    The last ceil(eval_fraction * N) pairs are held out; every epoch ends by
    scoring them (divergence, recall@1/5, mean embedding gap) with the
    adapters as they stand.  Raises :class:`TrainingAborted` if a step loss
    is non-finite or a divergence term loses all kernel overlap.
    """
    x = require_matrix(data.x, "x")
    y = require_matrix(data.y, "y")
    if x.shape[0] != y.shape[0]:
        raise PairCountMismatch(f"x has {x.shape[0]} rows, y has {y.shape[0]}")
    n = x.shape[0]
    eval_n = math.ceil(config.eval_fraction * n)
    train_n = n - eval_n
    if train_n < 2:
        raise ValueError(
            f"need at least 2 training pairs after the eval split, got {train_n}"
        )
    extras_typed = _validate_extras(config, data, extras, n)

    rng = RandomSource(derive_seed(config.seed, _STREAM_TRAIN))
    adapt_x = config.adapt_side in ("x", "both")
    adapt_y = config.adapt_side in ("y", "both")
    out_dim_x = y.shape[1] if not adapt_y else x.shape[1]
    out_dim_y = x.shape[1] if not adapt_x else y.shape[1]
    if adapt_x and adapt_y and x.shape[1] != y.shape[1]:
        raise DimensionMismatch(
            "adapt_side='both' requires equal embedding dimensions"
        )
    side_x = _Side(
        init_adapter(config.adapter_kind, x.shape[1], out_dim_x, config.adapter_hidden, rng)
        if adapt_x
        else None
    )
    side_y = _Side(
        init_adapter(config.adapter_kind, y.shape[1], out_dim_y, config.adapter_hidden, rng)
        if adapt_y
        else None
    )

    params: list[np.ndarray] = []
    if side_x.adapter is not None:
        params.extend(side_x.adapter.arrays())
    if side_y.adapter is not None:
        params.extend(side_y.adapter.arrays())
    adam = AdamState(params, config.learning_rate)

    x_train, y_train = x[:train_n], y[:train_n]
    x_eval, y_eval = x[train_n:], y[train_n:]
    loss_cfg = config.loss
    unpaired_pos_x = unpaired_pos_y = 0
    rows: list[MetricsRow] = []

    for epoch in range(config.epochs):
        perm = rng.permutation(train_n)
        sums = {"total": 0.0, "infonce": 0.0, "cs": 0.0, "token": 0.0}
        steps = 0
        for start in range(0, train_n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            if idx.size < 2:
                break  # a 1-row remainder cannot score negatives; skip it
            try:
                step_vals = _train_step(
                    config.regime,
                    loss_cfg,
                    side_x,
                    side_y,
                    x_train,
                    y_train,
                    idx,
                    extras_typed,
                    (unpaired_pos_x, unpaired_pos_y),
                )
            except NonOverlappingError as exc:
                raise TrainingAborted(
                    f"epoch {epoch}: divergence term became infinite ({exc})"
                ) from None
            total, comp, (unpaired_pos_x, unpaired_pos_y) = step_vals
            if not math.isfinite(total):
                raise TrainingAborted(f"epoch {epoch}: non-finite loss {total!r}")
            grads = side_x.grads() + side_y.grads()
            adam.step(grads)
            sums["total"] += total
            for key, value in comp.items():
                sums[key] += value
            steps += 1
        if steps == 0:
            raise TrainingAborted("no usable batches; increase data or reduce batch_size")

        has = {
            "infonce": config.regime != "cs_only",
            "cs": config.regime != "infonce_only",
            "token": config.regime == "combined_token",
        }
        eval_cs, r1, r5, gap = _eval_metrics(side_x, side_y, x_eval, y_eval, loss_cfg.sigma)
        rows.append(
            MetricsRow(
                epoch=epoch,
                loss_total=sums["total"] / steps,
                loss_infonce=sums["infonce"] / steps if has["infonce"] else None,
                loss_cs=sums["cs"] / steps if has["cs"] else None,
                loss_token=sums["token"] / steps if has["token"] else None,
                eval_cs_divergence=eval_cs,
                recall_at_1=r1,
                recall_at_5=r5,
                mean_embedding_gap=gap,
            )
        )
    return TrainedAdapters(x=side_x.adapter, y=side_y.adapter), rows


def _train_step(
    regime: str,
    loss_cfg: LossConfig,
    side_x: _Side,
    side_y: _Side,
    x_train: np.ndarray,
    y_train: np.ndarray,
    idx: np.ndarray,
    extras_typed,
    unpaired_pos: tuple[int, int],
) -> tuple[float, dict[str, float], tuple[int, int]]:
    """One forward/backward pass; records adapter grads, returns loss values."""
    xb_raw = x_train[idx]
    yb_raw = y_train[idx]
    nb = idx.size
    pos_x, pos_y = unpaired_pos

    if regime == "combined_multicaption":
        captions = extras_typed
        cap_list = [captions[j] for j in idx]
        counts = np.array([c.shape[0] for c in cap_list])
        offsets = np.concatenate(([0], np.cumsum(counts)))[:-1]
        pool_raw = np.vstack(cap_list)
        ax = side_x.forward(xb_raw)
        a_pool = side_y.forward(pool_raw)
        nx = l2_normalize_rows(ax)
        n_pool = l2_normalize_rows(a_pool)
        n_cap0 = n_pool[offsets]
        v_inf, d_nx_inf, d_cap0 = _infonce_value_and_upstream(nx, n_cap0, loss_cfg.tau)
        v_cs, d_nx_cs, d_pool_cs = _cs_value_and_upstream(nx, n_pool, loss_cfg.sigma)
        up_x = loss_cfg.cs_weight * d_nx_cs
        up_x += d_nx_inf
        up_pool = loss_cfg.cs_weight * d_pool_cs
        up_pool[offsets] += d_cap0
        side_x.record(xb_raw, grad_normalize_chain(ax, up_x))
        side_y.record(pool_raw, grad_normalize_chain(a_pool, up_pool))
        total = v_inf + loss_cfg.cs_weight * v_cs
        return total, {"infonce": v_inf, "cs": v_cs}, (pos_x, pos_y)

    ax = side_x.forward(xb_raw)
    ay = side_y.forward(yb_raw)
    nx = l2_normalize_rows(ax)
    ny = l2_normalize_rows(ay)

    if regime == "infonce_only":
        v_inf, d_nx, d_ny = _infonce_value_and_upstream(nx, ny, loss_cfg.tau)
        side_x.record(xb_raw, grad_normalize_chain(ax, d_nx))
        side_y.record(yb_raw, grad_normalize_chain(ay, d_ny))
        return v_inf, {"infonce": v_inf}, (pos_x, pos_y)

    if regime == "cs_only":
        v_cs, d_nx, d_ny = _cs_value_and_upstream(nx, ny, loss_cfg.sigma)
        side_x.record(xb_raw, grad_normalize_chain(ax, d_nx))
        side_y.record(yb_raw, grad_normalize_chain(ay, d_ny))
        return v_cs, {"cs": v_cs}, (pos_x, pos_y)

    if regime == "combined":
        v_inf, d_nx_inf, d_ny_inf = _infonce_value_and_upstream(nx, ny, loss_cfg.tau)
        v_cs, d_nx_cs, d_ny_cs = _cs_value_and_upstream(nx, ny, loss_cfg.sigma)
        up_x = loss_cfg.cs_weight * d_nx_cs
        up_x += d_nx_inf
        up_y = loss_cfg.cs_weight * d_ny_cs
        up_y += d_ny_inf
        side_x.record(xb_raw, grad_normalize_chain(ax, up_x))
        side_y.record(yb_raw, grad_normalize_chain(ay, up_y))
        total = v_inf + loss_cfg.cs_weight * v_cs
        return total, {"infonce": v_inf, "cs": v_cs}, (pos_x, pos_y)

    if regime == "combined_unpaired":
        pool = extras_typed
        ux_raw, pos_x = _take_cyclic(pool.extra_x, pos_x, min(nb, pool.extra_x.shape[0]))
        uy_raw, pos_y = _take_cyclic(pool.extra_y, pos_y, min(nb, pool.extra_y.shape[0]))
        x_all_raw = np.vstack([xb_raw, ux_raw]) if ux_raw.shape[0] else xb_raw
        y_all_raw = np.vstack([yb_raw, uy_raw]) if uy_raw.shape[0] else yb_raw
        ax_all = side_x.forward(x_all_raw)
        ay_all = side_y.forward(y_all_raw)
        nx_all = l2_normalize_rows(ax_all)
        ny_all = l2_normalize_rows(ay_all)
        v_inf, d_nx_inf, d_ny_inf = _infonce_value_and_upstream(
            nx_all[:nb], ny_all[:nb], loss_cfg.tau
        )
        v_cs, d_nx_cs, d_ny_cs = _cs_value_and_upstream(nx_all, ny_all, loss_cfg.sigma)
        up_x = loss_cfg.cs_weight * d_nx_cs
        up_x[:nb] += d_nx_inf
        up_y = loss_cfg.cs_weight * d_ny_cs
        up_y[:nb] += d_ny_inf
        side_x.record(x_all_raw, grad_normalize_chain(ax_all, up_x))
        side_y.record(y_all_raw, grad_normalize_chain(ay_all, up_y))
        total = v_inf + loss_cfg.cs_weight * v_cs
        return total, {"infonce": v_inf, "cs": v_cs}, (pos_x, pos_y)

    if regime == "combined_token":
        vision, text = extras_typed
        v_inf, d_nx_inf, d_ny_inf = _infonce_value_and_upstream(nx, ny, loss_cfg.tau)
        v_cs, d_nx_cs, d_ny_cs = _cs_value_and_upstream(nx, ny, loss_cfg.sigma)
        up_x = loss_cfg.cs_weight * d_nx_cs
        up_x += d_nx_inf
        up_y = loss_cfg.cs_weight * d_ny_cs
        up_y += d_ny_inf
        side_x.record(xb_raw, grad_normalize_chain(ax, up_x))
        side_y.record(yb_raw, grad_normalize_chain(ay, up_y))

        av_list = [side_x.forward(vision[j]) for j in idx]
        at_list = [side_y.forward(text[j]) for j in idx]
        nv_list = [l2_normalize_rows(m) for m in av_list]
        nt_list = [l2_normalize_rows(m) for m in at_list]
        kp = KernelParams(sigma=loss_cfg.sigma)
        v_token = token_cs_loss(nv_list, nt_list, kp)
        d_nv, d_nt = grad_token_cs(nv_list, nt_list, kp)
        for j_pos, j in enumerate(idx):
            side_x.record(
                vision[j],
                grad_normalize_chain(
                    av_list[j_pos], loss_cfg.cs_weight * d_nv[j_pos]
                ),
            )
            side_y.record(
                text[j],
                grad_normalize_chain(
                    at_list[j_pos], loss_cfg.cs_weight * d_nt[j_pos]
                ),
            )
        total = v_inf + loss_cfg.cs_weight * (v_cs + v_token)
        return (
            total,
            {"infonce": v_inf, "cs": v_cs, "token": v_token},
            (pos_x, pos_y),
        )

    raise ValueError(f"unknown regime {regime!r}")


def _eval_metrics(
    side_x: _Side, side_y: _Side, x_eval: np.ndarray, y_eval: np.ndarray, sigma: float
) -> tuple[float, float, float, float]:
    nx = l2_normalize_rows(side_x.forward(x_eval))
    ny = l2_normalize_rows(side_y.forward(y_eval))
    eval_cs = cs_divergence(nx, ny, KernelParams(sigma=sigma))
    r1_a, r1_b = evaluate_retrieval(nx, ny, 1)
    r5_a, r5_b = evaluate_retrieval(nx, ny, 5)
    gap_vec = nx.mean(axis=0) - ny.mean(axis=0)
    gap = float(np.sqrt((gap_vec * gap_vec).sum()))
    return eval_cs, (r1_a + r1_b) / 2.0, (r5_a + r5_b) / 2.0, gap


DEFAULT_SWEEP_WEIGHTS = (0.0, 0.001, 0.01, 0.1, 1.0)
DEFAULT_SWEEP_SIGMAS = (0.5, 1.0, 1.5)


def sweep(
    config: TrainConfig,
    data: PairedDataset,
    cs_weights: Sequence[float] = DEFAULT_SWEEP_WEIGHTS,
    sigmas: Sequence[float] = DEFAULT_SWEEP_SIGMAS,
    threads: int = 1,
) -> list[SweepRow]:
    """Train the combined objective over a (cs_weight, sigma) grid.

    Every run shares the same data, seed, and schedule; only the loss weights
    change.  Rows come back in grid order (weights outer, sigmas inner).
    ``threads`` > 1 runs grid points in a thread pool; results are identical
    to the sequential ones, just reordered in time.
    """
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    grid = [(w, s) for w in cs_weights for s in sigmas]

    def run(point: tuple[float, float]) -> SweepRow:
        weight, sigma = point
        cfg = replace(
            config,
            regime="combined",
            loss=replace(config.loss, cs_weight=weight, sigma=sigma),
        )
        _, rows = train(cfg, data)
        last = rows[-1]
        return SweepRow(
            cs_weight=weight,
            sigma=sigma,
            final_eval_cs=last.eval_cs_divergence,
            final_recall_at_1=last.recall_at_1,
        )

    if threads == 1:
        return [run(point) for point in grid]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, grid))
