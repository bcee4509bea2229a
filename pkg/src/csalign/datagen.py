"""Synthetic paired/unpaired/token data, and the on-disk formats.

The generative process is a shared-latent model: both modalities are linear
images of one latent draw, the second modality is offset by ``gap`` along a
fixed unit direction, and each gets its own additive noise.  The offset gives
the two embedding clouds a controllable distribution mismatch that pair-level
objectives struggle to remove — exactly the situation the divergence term is
for.

Map parameters, paired draws, and unpaired draws come from separate derived
seed streams, so e.g. requesting an unpaired pool never changes the paired
data of the same seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .divergence import require_token_batch
from .errors import DimensionError, FileFormatError
from .numerics import RandomSource, derive_seed, require_matrix

_STREAM_MAPS = 1
_STREAM_PAIRS = 2
_STREAM_UNPAIRED = 3
_STREAM_CAPTIONS = 6
_STREAM_TOKENS = 5

_FORMAT_MAGIC = "embt"
_FORMAT_VERSION = "1"


def caption_stream(seed: int) -> RandomSource:
    """The dedicated random stream for caption jitter under ``seed``."""
    return RandomSource(derive_seed(seed, _STREAM_CAPTIONS))


def token_stream(seed: int) -> RandomSource:
    """The dedicated random stream for token clouds under ``seed``."""
    return RandomSource(derive_seed(seed, _STREAM_TOKENS))


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the shared-latent generative process."""

    n_pairs: int
    latent_dim: int
    embed_dim: int
    gap: float = 0.0
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError(f"n_pairs must be >= 1, got {self.n_pairs}")
        if self.latent_dim < 1 or self.embed_dim < 1:
            raise ValueError("latent_dim and embed_dim must be >= 1")
        if not (self.gap >= 0.0 and math.isfinite(self.gap)):
            raise ValueError(f"gap must be >= 0 and finite, got {self.gap!r}")
        if not (self.noise_std >= 0.0 and math.isfinite(self.noise_std)):
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std!r}")


@dataclass
class PairedDataset:
    """Row-aligned embeddings: x[i] and y[i] describe the same sample."""

    x: np.ndarray
    y: np.ndarray
    provenance: object = None


@dataclass
class MultiCaptionDataset:
    """One x row per sample plus k >= 1 y-side variants per sample.

    ``captions[i]`` is a (k, dim) matrix whose first row is the original
    y[i]; the rest are noised variants of it.
    """

    x: np.ndarray
    captions: list[np.ndarray]
    provenance: object = None


@dataclass
class UnpairedPool:
    """Extra single-modality rows drawn from the same marginals as a paired set."""

    extra_x: np.ndarray
    extra_y: np.ndarray


def _unit_direction(rng: RandomSource, dim: int) -> np.ndarray:
    raw = rng.normals(dim)
    norm = math.sqrt(float(raw @ raw))
    if norm <= 1e-12:  # vanishing chance; fall back to a basis vector
        raw = np.zeros(dim)
        raw[0] = 1.0
        return raw
    return raw / norm


def _make_maps(
    config: SyntheticConfig, force_equal_maps: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The two modality maps and the offset direction, from the map stream."""
    rng = RandomSource(derive_seed(config.seed, _STREAM_MAPS))
    scale = 1.0 / math.sqrt(config.latent_dim)
    a = rng.normals(config.latent_dim * config.embed_dim, std=scale).reshape(
        config.latent_dim, config.embed_dim
    )
    b = rng.normals(config.latent_dim * config.embed_dim, std=scale).reshape(
        config.latent_dim, config.embed_dim
    )
    g = _unit_direction(rng, config.embed_dim)
    if force_equal_maps:
        b = a
    return a, b, g


def gen_paired(config: SyntheticConfig, *, force_equal_maps: bool = False) -> PairedDataset:
    """Aligned pairs from the shared-latent model.

    x_i = z_i A + noise, y_i = z_i B + gap * g + noise, with one latent z_i
    per pair.  ``force_equal_maps`` replaces B by A (a debugging switch: with
    gap 0 and noise 0 both modalities then coincide exactly).
    """
    a, b, g = _make_maps(config, force_equal_maps)
    rng = RandomSource(derive_seed(config.seed, _STREAM_PAIRS))
    n = config.n_pairs
    z = rng.normals(n * config.latent_dim).reshape(n, config.latent_dim)
    ex = rng.normals(n * config.embed_dim).reshape(n, config.embed_dim)
    ey = rng.normals(n * config.embed_dim).reshape(n, config.embed_dim)
    x = z @ a + config.noise_std * ex
    y = z @ b + config.gap * g + config.noise_std * ey
    return PairedDataset(x=x, y=y, provenance=config)


def gen_unpaired(config: SyntheticConfig, m_x: int, m_y: int) -> UnpairedPool:
    """Unpaired rows with the *same* maps as :func:`gen_paired` on this config.

    Fresh latents on each side (there is no correspondence between extra_x
    and extra_y rows), drawn from a stream independent of the paired one.
    Either count may be zero.
    """
    if m_x < 0 or m_y < 0:
        raise ValueError("unpaired counts must be >= 0")
    a, b, g = _make_maps(config, force_equal_maps=False)
    rng = RandomSource(derive_seed(config.seed, _STREAM_UNPAIRED))
    zx = rng.normals(m_x * config.latent_dim).reshape(m_x, config.latent_dim)
    ex = rng.normals(m_x * config.embed_dim).reshape(m_x, config.embed_dim)
    zy = rng.normals(m_y * config.latent_dim).reshape(m_y, config.latent_dim)
    ey = rng.normals(m_y * config.embed_dim).reshape(m_y, config.embed_dim)
    extra_x = zx @ a + config.noise_std * ex
    extra_y = zy @ b + config.gap * g + config.noise_std * ey
    return UnpairedPool(extra_x=extra_x, extra_y=extra_y)


def gen_multi_caption(
    base: PairedDataset, k: int, caption_noise: float, rng: RandomSource
) -> MultiCaptionDataset:
    """Expand each y row into k variants: the original plus k-1 noised copies."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not (caption_noise >= 0.0 and math.isfinite(caption_noise)):
        raise ValueError(f"caption_noise must be >= 0, got {caption_noise!r}")
    x = require_matrix(base.x, "x")
    y = require_matrix(base.y, "y")
    n, dim = y.shape
    captions: list[np.ndarray] = []
    if k == 1:
        captions = [y[i : i + 1].copy() for i in range(n)]
    else:
        extra = rng.normals(n * (k - 1) * dim).reshape(n, k - 1, dim)
        for i in range(n):
            captions.append(np.vstack([y[i : i + 1], y[i] + caption_noise * extra[i]]))
    return MultiCaptionDataset(x=x, captions=captions, provenance=base.provenance)


def gen_token_clouds(
    count: int,
    vision_range: tuple[int, int],
    text_range: tuple[int, int],
    dim: int,
    gap: float,
    rng: RandomSource,
    *,
    cloud_std: float = 1.0,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-sample token sets: two point clouds around a shared center.

    Sample i gets a random center c_i; vision tokens scatter around c_i and
    text tokens around c_i + gap * g for a fixed unit direction g.  Token
    counts are drawn uniformly from the given inclusive ranges.
    ``cloud_std`` scales the scatter (0 collapses each cloud onto its center).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    for name, (lo, hi) in (("vision_range", vision_range), ("text_range", text_range)):
        if not (1 <= lo <= hi):
            raise ValueError(f"{name} must satisfy 1 <= lo <= hi, got ({lo}, {hi})")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not (gap >= 0.0 and math.isfinite(gap)):
        raise ValueError(f"gap must be >= 0 and finite, got {gap!r}")
    if not (cloud_std >= 0.0 and math.isfinite(cloud_std)):
        raise ValueError(f"cloud_std must be >= 0, got {cloud_std!r}")
    g = _unit_direction(rng, dim)
    offset = gap * g
    vision: list[np.ndarray] = []
    text: list[np.ndarray] = []
    for _ in range(count):
        n_v = rng.randint(vision_range[0], vision_range[1])
        n_t = rng.randint(text_range[0], text_range[1])
        center = rng.normals(dim)
        v = center + cloud_std * rng.normals(n_v * dim).reshape(n_v, dim)
        t = (center + offset) + cloud_std * rng.normals(n_t * dim).reshape(n_t, dim)
        vision.append(v)
        text.append(t)
    return vision, text


def write_embeddings(path, m) -> None:
    """Write a matrix as text: header ``embt 1 <rows> <cols>``, one row per line.

    Values are printed with ``repr``, which emits the shortest string that
    parses back to the same double — so write/read round-trips are exact.
    """
    arr = require_matrix(m, "matrix")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{_FORMAT_MAGIC} {_FORMAT_VERSION} {arr.shape[0]} {arr.shape[1]}\n")
        for row in arr:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_embeddings(path) -> np.ndarray:
    """Read a matrix written by :func:`write_embeddings`, validating strictly.

    Raises :class:`FileFormatError` (with a line number) for a bad header,
    unparseable or non-finite values, or a row-count mismatch, and
    :class:`DimensionError` if a row has the wrong number of fields.
    """
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FileFormatError("empty file", line=1)
    header = lines[0].split()
    if len(header) != 4 or header[0] != _FORMAT_MAGIC:
        raise FileFormatError(
            f"expected header '{_FORMAT_MAGIC} {_FORMAT_VERSION} <rows> <cols>'", line=1
        )
    if header[1] != _FORMAT_VERSION:
        raise FileFormatError(f"unsupported version {header[1]!r}", line=1)
    try:
        rows = int(header[2])
        cols = int(header[3])
    except ValueError:
        raise FileFormatError("rows and cols must be integers", line=1) from None
    if rows < 0 or cols < 1:
        raise FileFormatError(f"invalid shape {rows} x {cols}", line=1)
    body = lines[1:]
    if len(body) != rows:
        raise FileFormatError(
            f"expected {rows} data rows, found {len(body)}", line=len(lines)
        )
    out = np.zeros((rows, cols), dtype=np.float64)
    for i, line in enumerate(body):
        fields = line.split()
        if len(fields) != cols:
            raise DimensionError(
                f"line {i + 2}: row has {len(fields)} fields, header says {cols}"
            )
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise FileFormatError("unparseable value", line=i + 2) from None
        if not all(math.isfinite(v) for v in values):
            raise FileFormatError("non-finite value", line=i + 2)
        out[i] = values
    return out


def write_token_batch(path, batch) -> None:
    """Write per-sample token matrices as JSON: [{"id": i, "tokens": [[...]]}]."""
    mats = require_token_batch(batch, "batch")
    doc = [
        {"id": i, "tokens": [[float(v) for v in row] for row in m]}
        for i, m in enumerate(mats)
    ]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def read_token_batch(path) -> list[np.ndarray]:
    """Read token matrices written by :func:`write_token_batch`, ordered by id.

    Ids must be exactly 0..B-1 (in any order).  Ragged rows within a sample
    raise :class:`DimensionError`; structural problems raise
    :class:`FileFormatError`.
    """
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, list) or not doc:
        raise FileFormatError("top level must be a non-empty list")
    by_id: dict[int, np.ndarray] = {}
    for item in doc:
        if not isinstance(item, dict) or set(item) != {"id", "tokens"}:
            raise FileFormatError("each entry must have exactly 'id' and 'tokens'")
        ident = item["id"]
        if not isinstance(ident, int) or isinstance(ident, bool):
            raise FileFormatError(f"id must be an integer, got {ident!r}")
        if ident in by_id:
            raise FileFormatError(f"duplicate id {ident}")
        tokens = item["tokens"]
        if not isinstance(tokens, list) or not tokens:
            raise FileFormatError(f"id {ident}: tokens must be a non-empty list")
        widths = set()
        for row in tokens:
            if not isinstance(row, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in row
            ):
                raise FileFormatError(f"id {ident}: each token must be a list of numbers")
            if not all(math.isfinite(float(v)) for v in row):
                raise FileFormatError(f"id {ident}: non-finite value")
            widths.add(len(row))
        if len(widths) != 1:
            raise DimensionError(f"id {ident}: ragged token rows {sorted(widths)}")
        if widths == {0}:
            raise FileFormatError(f"id {ident}: tokens must be non-empty vectors")
        by_id[ident] = np.asarray(tokens, dtype=np.float64)
    expected = set(range(len(doc)))
    if set(by_id) != expected:
        raise FileFormatError(
            f"ids must be exactly 0..{len(doc) - 1}, got {sorted(by_id)}"
        )
    return require_token_batch([by_id[i] for i in range(len(doc))], "batch")
