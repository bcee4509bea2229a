"""Command-line surface: estimator queries, reference reports, gradient
checks, training runs, sweeps, and dataset generation.

The CLI is a thin shell over the library — every printed value is the direct
result of one library call.  Exit codes form a stable contract:

  0  success
  2  usage, flag, file, or config error (diagnostic on stderr)
  3  the estimate is the non-overlapping value
  4  gradient check failed its tolerance
  5  training aborted (non-finite loss or vanished kernel overlap)

Output files (CSV, embedding text) are written to a temporary file in the
destination directory and renamed into place, so a crashed run never leaves a
half-written artifact.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field

from .analytic import toy_example_report
from .datagen import (
    MultiCaptionDataset,
    PairedDataset,
    SyntheticConfig,
    UnpairedPool,
    caption_stream,
    gen_multi_caption,
    gen_paired,
    gen_token_clouds,
    gen_unpaired,
    read_embeddings,
    token_stream,
    write_embeddings,
    write_token_batch,
)
from .divergence import cs_divergence, cs_divergence_rkhs, is_non_overlapping
from .errors import ConfigError, CsalignError, PairCountMismatch, TrainingAborted
from .gradients import finite_difference_check
from .kernels import KernelParams
from .losses import LossConfig
from .numerics import RandomSource
from .trainer import (
    DEFAULT_SWEEP_SIGMAS,
    DEFAULT_SWEEP_WEIGHTS,
    MetricsRow,
    SweepRow,
    TrainConfig,
    sweep,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NON_OVERLAPPING = 3
EXIT_GRADCHECK_FAILED = 4
EXIT_TRAINING_ABORTED = 5

_GRADCHECK_TOLERANCE = 1e-4

METRICS_HEADER = (
    "epoch,loss_total,loss_infonce,loss_cs,loss_token,"
    "eval_cs_divergence,recall_at_1,recall_at_5,mean_embedding_gap"
)
SWEEP_HEADER = "lambda,sigma,final_eval_cs,final_recall_at_1"


# ---------------------------------------------------------------------------
# run configuration files


@dataclass
class RunSpec:
    """A validated run configuration, ready to build data and train."""

    regime: str
    synthetic: SyntheticConfig | None
    files: tuple[str, str] | None
    loss: LossConfig
    train: TrainConfig
    extras_kind: str | None = None
    extras: dict = field(default_factory=dict)


def _check_keys(doc: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")


def _expect_dict(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, "expected an object")
    return value


def _get_int(doc: dict, key: str, path: str, default=None, required=False) -> int:
    if key not in doc:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required key")
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {value!r}")
    return value


def _get_real(doc: dict, key: str, path: str, default=None, required=False) -> float:
    if key not in doc:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required key")
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {value!r}")
    if not math.isfinite(float(value)):
        raise ConfigError(f"{path}.{key}", "value must be finite")
    return float(value)


def _get_str(doc: dict, key: str, path: str, default=None, required=False) -> str:
    if key not in doc:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required key")
        return default
    value = doc[key]
    if not isinstance(value, str):
        raise ConfigError(f"{path}.{key}", f"expected a string, got {value!r}")
    return value


def parse_run_config(doc) -> RunSpec:
    """Validate a run-config JSON document (strict: unknown keys rejected)."""
    top = _expect_dict(doc, "<top>")
    _check_keys(top, {"regime", "data", "loss", "train", "extras"}, "<top>")
    regime = _get_str(top, "regime", "<top>", required=True)

    if "data" not in top:
        raise ConfigError("<top>.data", "missing required key")
    data = _expect_dict(top["data"], "data")
    _check_keys(data, {"synthetic", "files"}, "data")
    if ("synthetic" in data) == ("files" in data):
        raise ConfigError("data", "provide exactly one of 'synthetic' or 'files'")
    synthetic = None
    files = None
    if "synthetic" in data:
        sd = _expect_dict(data["synthetic"], "data.synthetic")
        _check_keys(
            sd,
            {"n_pairs", "latent_dim", "embed_dim", "gap", "noise_std", "seed"},
            "data.synthetic",
        )
        try:
            synthetic = SyntheticConfig(
                n_pairs=_get_int(sd, "n_pairs", "data.synthetic", required=True),
                latent_dim=_get_int(sd, "latent_dim", "data.synthetic", required=True),
                embed_dim=_get_int(sd, "embed_dim", "data.synthetic", required=True),
                gap=_get_real(sd, "gap", "data.synthetic", default=0.0),
                noise_std=_get_real(sd, "noise_std", "data.synthetic", default=0.1),
                seed=_get_int(sd, "seed", "data.synthetic", default=0),
            )
        except ValueError as exc:
            raise ConfigError("data.synthetic", str(exc)) from None
    else:
        fd = _expect_dict(data["files"], "data.files")
        _check_keys(fd, {"x", "y"}, "data.files")
        files = (
            _get_str(fd, "x", "data.files", required=True),
            _get_str(fd, "y", "data.files", required=True),
        )

    loss_doc = _expect_dict(top.get("loss", {}), "loss")
    _check_keys(loss_doc, {"tau", "lambda", "alpha", "sigma"}, "loss")
    try:
        loss = LossConfig(
            tau=_get_real(loss_doc, "tau", "loss", default=0.07),
            cs_weight=_get_real(loss_doc, "lambda", "loss", default=0.01),
            alpha=_get_real(loss_doc, "alpha", "loss", default=2.0),
            sigma=_get_real(loss_doc, "sigma", "loss", default=1.0),
        )
    except ValueError as exc:
        raise ConfigError("loss", str(exc)) from None

    train_doc = _expect_dict(top.get("train", {}), "train")
    _check_keys(
        train_doc,
        {
            "epochs",
            "batch_size",
            "learning_rate",
            "adapt_side",
            "eval_fraction",
            "seed",
            "adapter_kind",
            "adapter_hidden",
        },
        "train",
    )
    try:
        train_cfg = TrainConfig(
            regime=regime,
            epochs=_get_int(train_doc, "epochs", "train", default=50),
            batch_size=_get_int(train_doc, "batch_size", "train", default=256),
            learning_rate=_get_real(train_doc, "learning_rate", "train", default=0.01),
            loss=loss,
            adapt_side=_get_str(train_doc, "adapt_side", "train", default="y"),
            adapter_kind=_get_str(train_doc, "adapter_kind", "train", default="linear"),
            adapter_hidden=_get_int(train_doc, "adapter_hidden", "train", default=32),
            eval_fraction=_get_real(train_doc, "eval_fraction", "train", default=0.2),
            seed=_get_int(train_doc, "seed", "train", default=0),
        )
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None

    spec = RunSpec(
        regime=regime, synthetic=synthetic, files=files, loss=loss, train=train_cfg
    )

    extras_needed = {
        "combined_unpaired": "unpaired",
        "combined_multicaption": "captions",
        "combined_token": "tokens",
    }
    if "extras" in top:
        extras_doc = _expect_dict(top["extras"], "extras")
        _check_keys(extras_doc, {"unpaired", "captions", "tokens"}, "extras")
        if len(extras_doc) != 1:
            raise ConfigError("extras", "provide exactly one extras block")
        kind = next(iter(extras_doc))
        needed = extras_needed.get(regime)
        if needed != kind:
            raise ConfigError(
                f"extras.{kind}", f"regime {regime!r} does not use this block"
            )
        block = _expect_dict(extras_doc[kind], f"extras.{kind}")
        if kind == "unpaired":
            _check_keys(block, {"m_x", "m_y"}, "extras.unpaired")
            spec.extras = {
                "m_x": _get_int(block, "m_x", "extras.unpaired", required=True),
                "m_y": _get_int(block, "m_y", "extras.unpaired", required=True),
            }
            if spec.extras["m_x"] < 0 or spec.extras["m_y"] < 0:
                raise ConfigError("extras.unpaired", "counts must be >= 0")
            if synthetic is None:
                raise ConfigError(
                    "extras.unpaired", "unpaired pools require synthetic data"
                )
        elif kind == "captions":
            _check_keys(block, {"k", "noise"}, "extras.captions")
            spec.extras = {
                "k": _get_int(block, "k", "extras.captions", required=True),
                "noise": _get_real(block, "noise", "extras.captions", default=0.1),
            }
            if spec.extras["k"] < 1:
                raise ConfigError("extras.captions.k", "k must be >= 1")
        else:
            _check_keys(
                block,
                {"v_min", "v_max", "l_min", "l_max", "gap", "cloud_std"},
                "extras.tokens",
            )
            spec.extras = {
                "v_min": _get_int(block, "v_min", "extras.tokens", default=3),
                "v_max": _get_int(block, "v_max", "extras.tokens", default=7),
                "l_min": _get_int(block, "l_min", "extras.tokens", default=5),
                "l_max": _get_int(block, "l_max", "extras.tokens", default=12),
                "gap": _get_real(block, "gap", "extras.tokens", default=0.0),
                "cloud_std": _get_real(block, "cloud_std", "extras.tokens", default=1.0),
            }
        spec.extras_kind = kind
    elif regime in extras_needed:
        raise ConfigError(
            "extras", f"regime {regime!r} requires an extras.{extras_needed[regime]} block"
        )
    return spec


def build_run_inputs(spec: RunSpec):
    """Materialize the dataset and extras a validated RunSpec describes."""
    if spec.synthetic is not None:
        data = gen_paired(spec.synthetic)
        base_seed = spec.synthetic.seed
    else:
        x = read_embeddings(spec.files[0])
        y = read_embeddings(spec.files[1])
        if x.shape[0] != y.shape[0]:
            raise PairCountMismatch(
                f"{spec.files[0]} has {x.shape[0]} rows, {spec.files[1]} has {y.shape[0]}"
            )
        data = PairedDataset(x=x, y=y, provenance=spec.files)
        base_seed = spec.train.seed

    extras = None
    if spec.extras_kind == "unpaired":
        extras = gen_unpaired(spec.synthetic, spec.extras["m_x"], spec.extras["m_y"])
    elif spec.extras_kind == "captions":
        extras = gen_multi_caption(
            data, spec.extras["k"], spec.extras["noise"], caption_stream(base_seed)
        )
    elif spec.extras_kind == "tokens":
        if data.x.shape[1] != data.y.shape[1]:
            raise ConfigError(
                "extras.tokens", "token clouds require equal x and y dimensions"
            )
        vision, text = gen_token_clouds(
            data.x.shape[0],
            (spec.extras["v_min"], spec.extras["v_max"]),
            (spec.extras["l_min"], spec.extras["l_max"]),
            data.x.shape[1],
            spec.extras["gap"],
            token_stream(base_seed),
            cloud_std=spec.extras["cloud_std"],
        )
        extras = (vision, text)
    return data, extras


# ---------------------------------------------------------------------------
# output helpers


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".csalign-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _atomic_write_with(path: str, writer) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".csalign-", suffix=".part")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _csv_cell(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def metrics_csv(rows: list[MetricsRow]) -> str:
    lines = [METRICS_HEADER]
    for row in rows:
        lines.append(
            ",".join(
                [
                    str(row.epoch),
                    _csv_cell(row.loss_total),
                    _csv_cell(row.loss_infonce),
                    _csv_cell(row.loss_cs),
                    _csv_cell(row.loss_token),
                    _csv_cell(row.eval_cs_divergence),
                    _csv_cell(row.recall_at_1),
                    _csv_cell(row.recall_at_5),
                    _csv_cell(row.mean_embedding_gap),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def sweep_csv(rows: list[SweepRow]) -> str:
    lines = [SWEEP_HEADER]
    for row in rows:
        lines.append(
            ",".join(
                [
                    _csv_cell(row.cs_weight),
                    _csv_cell(row.sigma),
                    _csv_cell(row.final_eval_cs),
                    _csv_cell(row.final_recall_at_1),
                ]
            )
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def _cmd_estimate(args) -> int:
    x = read_embeddings(args.x)
    y = read_embeddings(args.y)
    params = KernelParams(sigma=args.sigma)
    if args.rkhs:
        value = cs_divergence_rkhs(x, y, params)
    else:
        value = cs_divergence(x, y, params)
    if is_non_overlapping(value):
        print("non-overlapping")
        return EXIT_NON_OVERLAPPING
    print(f"{value:.12f}")
    return EXIT_OK


def _cmd_toy(args) -> int:
    report = toy_example_report()
    print(f"mi(0.99) {report.mi_strong_corr:.4f}")
    print(f"mi(0) {report.mi_no_corr:.4f}")
    print(f"kl(fig2a) {report.kl_separated:.4f}")
    print(f"kl(fig2b) {report.kl_identical:.4f}")
    print(
        "note: kl(fig2a) compares N(0, 2^2) against N(2, 1^2); the closed form "
        f"gives {report.kl_separated:.4f}, not the sometimes-quoted 6.81"
    )
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    if args.n < 2 or args.dim < 1:
        raise ConfigError("--n/--dim", "need n >= 2 and dim >= 1")
    rng = RandomSource(args.seed)
    if args.loss == "token":
        vision = []
        text = []
        for _ in range(args.n):
            n_v = rng.randint(2, 5)
            n_t = rng.randint(2, 5)
            vision.append(rng.normals(n_v * args.dim).reshape(n_v, args.dim))
            text.append(rng.normals(n_t * args.dim).reshape(n_t, args.dim))
        report = finite_difference_check("token", (vision, text), KernelParams())
    else:
        x = rng.normals(args.n * args.dim).reshape(args.n, args.dim)
        y = rng.normals(args.n * args.dim).reshape(args.n, args.dim)
        params = {
            "cs": KernelParams(),
            "infonce": 0.07,
            "objective": LossConfig(),
        }[args.loss]
        report = finite_difference_check(args.loss, (x, y), params)
    print(f"max_rel_err {report.max_rel_err:.6e}")
    print(f"worst {report.worst[0]} {report.worst[1]} {report.worst[2]}")
    print(f"step {report.step!r}")
    print(f"coords_checked {report.coords_checked}")
    return EXIT_OK if report.max_rel_err < _GRADCHECK_TOLERANCE else EXIT_GRADCHECK_FAILED


def _load_config_file(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc.msg} (line {exc.lineno})") from None


def _cmd_train(args) -> int:
    spec = parse_run_config(_load_config_file(args.config))
    data, extras = build_run_inputs(spec)
    _, rows = train(spec.train, data, extras)
    _atomic_write_text(args.out, metrics_csv(rows))
    return EXIT_OK


def _sweep_threads() -> int:
    raw = os.environ.get("CSALIGN_THREADS")
    if raw is None:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError("CSALIGN_THREADS", f"expected an integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigError("CSALIGN_THREADS", "must be >= 1")
    return threads


def _cmd_sweep(args) -> int:
    spec = parse_run_config(_load_config_file(args.config))
    if spec.extras_kind is not None:
        raise ConfigError("extras", "sweep runs take no extras")
    data, _ = build_run_inputs(spec)
    rows = sweep(
        spec.train,
        data,
        cs_weights=DEFAULT_SWEEP_WEIGHTS,
        sigmas=DEFAULT_SWEEP_SIGMAS,
        threads=_sweep_threads(),
    )
    _atomic_write_text(args.out, sweep_csv(rows))
    return EXIT_OK


def _synthetic_from_args(args) -> SyntheticConfig:
    try:
        return SyntheticConfig(
            n_pairs=args.n,
            latent_dim=args.latent_dim,
            embed_dim=args.embed_dim,
            gap=args.gap,
            noise_std=args.noise_std,
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError("gen", str(exc)) from None


def _cmd_gen_paired(args) -> int:
    data = gen_paired(_synthetic_from_args(args))
    _atomic_write_with(args.out_x, lambda tmp: write_embeddings(tmp, data.x))
    _atomic_write_with(args.out_y, lambda tmp: write_embeddings(tmp, data.y))
    return EXIT_OK


def _cmd_gen_unpaired(args) -> int:
    if args.m_x < 0 or args.m_y < 0:
        raise ConfigError("--m-x/--m-y", "counts must be >= 0")
    pool = gen_unpaired(_synthetic_from_args(args), args.m_x, args.m_y)
    _atomic_write_with(args.out_x, lambda tmp: write_embeddings(tmp, pool.extra_x))
    _atomic_write_with(args.out_y, lambda tmp: write_embeddings(tmp, pool.extra_y))
    return EXIT_OK


def _cmd_gen_tokens(args) -> int:
    if args.n < 1 or args.dim < 1:
        raise ConfigError("--n/--dim", "need n >= 1 and dim >= 1")
    try:
        vision, text = gen_token_clouds(
            args.n,
            (args.v_min, args.v_max),
            (args.l_min, args.l_max),
            args.dim,
            args.gap,
            token_stream(args.seed),
            cloud_std=args.cloud_std,
        )
    except ValueError as exc:
        raise ConfigError("gen tokens", str(exc)) from None
    _atomic_write_with(args.out_vision, lambda tmp: write_token_batch(tmp, vision))
    _atomic_write_with(args.out_text, lambda tmp: write_token_batch(tmp, text))
    return EXIT_OK


def _add_synthetic_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, required=True, help="number of pairs")
    parser.add_argument("--latent-dim", type=int, required=True)
    parser.add_argument("--embed-dim", type=int, required=True)
    parser.add_argument("--gap", type=float, default=0.0)
    parser.add_argument("--noise-std", type=float, default=0.1)
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csalign",
        description="Kernel divergence estimation and contrastive embedding alignment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="divergence between two embedding files")
    p.add_argument("--x", required=True, help="EMBT/1 embedding file")
    p.add_argument("--y", required=True, help="EMBT/1 embedding file")
    p.add_argument("--sigma", type=float, default=1.0, help="kernel width")
    p.add_argument("--rkhs", action="store_true", help="use the mean-embedding cosine form")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("toy", help="closed-form Gaussian reference values")
    p.set_defaults(func=_cmd_toy)

    p = sub.add_parser("gradcheck", help="finite-difference check of one loss gradient")
    p.add_argument("--loss", required=True, choices=("cs", "infonce", "objective", "token"))
    p.add_argument("--n", type=int, required=True, help="rows (or token samples)")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("train", help="run one training config, write metrics CSV")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="grid over divergence weight and kernel width")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gen", help="write synthetic datasets to files")
    gen_sub = p.add_subparsers(dest="kind", required=True)

    g = gen_sub.add_parser("paired", help="paired embeddings (two EMBT/1 files)")
    _add_synthetic_flags(g)
    g.add_argument("--out-x", required=True)
    g.add_argument("--out-y", required=True)
    g.set_defaults(func=_cmd_gen_paired)

    g = gen_sub.add_parser("unpaired", help="unpaired pools sharing a paired config's maps")
    _add_synthetic_flags(g)
    g.add_argument("--m-x", type=int, required=True)
    g.add_argument("--m-y", type=int, required=True)
    g.add_argument("--out-x", required=True)
    g.add_argument("--out-y", required=True)
    g.set_defaults(func=_cmd_gen_unpaired)

    g = gen_sub.add_parser("tokens", help="per-sample token clouds (two JSON files)")
    g.add_argument("--n", type=int, required=True, help="number of samples")
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--v-min", type=int, default=3)
    g.add_argument("--v-max", type=int, default=7)
    g.add_argument("--l-min", type=int, default=5)
    g.add_argument("--l-max", type=int, default=12)
    g.add_argument("--gap", type=float, default=0.0)
    g.add_argument("--cloud-std", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-vision", required=True)
    g.add_argument("--out-text", required=True)
    g.set_defaults(func=_cmd_gen_tokens)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints its own diagnostics
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING_ABORTED
    except (CsalignError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
