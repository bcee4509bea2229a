"""csalign: kernel divergence estimation and contrastive embedding alignment.

The package measures how far apart two embedding distributions sit (a
log-ratio divergence built from Gaussian-kernel Gram means), trains small
adapters that pull two modalities together under a combined contrastive +
divergence objective, and ships the analytic oracles, synthetic data
generators, and gradient machinery needed to test all of it to tight
tolerances.
"""

from .analytic import (
    GaussianSpec,
    QuadratureSpec,
    ToyReport,
    cs_gaussian_population,
    cs_gaussian_population_closed,
    kl_gaussian_1d,
    kl_gaussian_quad,
    mi_gaussian,
    simpson,
    toy_example_report,
)
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
    read_token_batch,
    token_stream,
    write_embeddings,
    write_token_batch,
)
from .divergence import (
    NON_OVERLAPPING,
    cs_divergence,
    cs_divergence_rkhs,
    is_non_overlapping,
    token_cs_loss,
)
from .errors import (
    BatchSizeMismatch,
    ConfigError,
    CsalignError,
    DimensionError,
    DimensionMismatch,
    EmptySet,
    FileFormatError,
    InvalidCorrelation,
    NonOverlappingError,
    NonOverlappingTokens,
    NotNormalized,
    PairCountMismatch,
    QuadratureNotConverged,
    TrainingAborted,
    ZeroNormRow,
    ZeroNormVector,
)
from .gradients import (
    GradCheckReport,
    GradientPair,
    finite_difference_check,
    finite_difference_report,
    grad_cs,
    grad_infonce,
    grad_normalize_chain,
    grad_objective,
    grad_token_cs,
    objective_value,
)
from .kernels import GramStats, KernelParams, gaussian_kernel, gram_stats, kernel_matrix
from .losses import (
    LossConfig,
    LossReport,
    alignment_term,
    cs_aligner_objective,
    decomposed_objective,
    infonce,
    prior_l2,
    uniformity_taylor,
    uniformity_term,
)
from .numerics import (
    BivariateGaussianSpec,
    RandomSource,
    cosine_sim,
    derive_seed,
    l2_normalize_rows,
    pairwise_sq_dists,
    sample_bivariate,
    sample_gaussian,
)
from .trainer import (
    AdapterParams,
    MetricsRow,
    SweepRow,
    TrainConfig,
    TrainedAdapters,
    adapter_forward,
    evaluate_retrieval,
    init_adapter,
    sweep,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterParams",
    "BatchSizeMismatch",
    "BivariateGaussianSpec",
    "ConfigError",
    "CsalignError",
    "DimensionError",
    "DimensionMismatch",
    "EmptySet",
    "FileFormatError",
    "GaussianSpec",
    "GradCheckReport",
    "GradientPair",
    "GramStats",
    "InvalidCorrelation",
    "KernelParams",
    "LossConfig",
    "LossReport",
    "MetricsRow",
    "MultiCaptionDataset",
    "NON_OVERLAPPING",
    "NonOverlappingError",
    "NonOverlappingTokens",
    "NotNormalized",
    "PairCountMismatch",
    "PairedDataset",
    "QuadratureNotConverged",
    "QuadratureSpec",
    "RandomSource",
    "SweepRow",
    "SyntheticConfig",
    "ToyReport",
    "TrainConfig",
    "TrainedAdapters",
    "TrainingAborted",
    "UnpairedPool",
    "ZeroNormRow",
    "ZeroNormVector",
    "adapter_forward",
    "alignment_term",
    "caption_stream",
    "cosine_sim",
    "cs_aligner_objective",
    "cs_divergence",
    "cs_divergence_rkhs",
    "cs_gaussian_population",
    "cs_gaussian_population_closed",
    "decomposed_objective",
    "derive_seed",
    "evaluate_retrieval",
    "finite_difference_check",
    "finite_difference_report",
    "gaussian_kernel",
    "gen_multi_caption",
    "gen_paired",
    "gen_token_clouds",
    "gen_unpaired",
    "grad_cs",
    "grad_infonce",
    "grad_normalize_chain",
    "grad_objective",
    "grad_token_cs",
    "gram_stats",
    "infonce",
    "init_adapter",
    "is_non_overlapping",
    "kernel_matrix",
    "kl_gaussian_1d",
    "kl_gaussian_quad",
    "l2_normalize_rows",
    "mi_gaussian",
    "objective_value",
    "pairwise_sq_dists",
    "prior_l2",
    "read_embeddings",
    "read_token_batch",
    "sample_bivariate",
    "sample_gaussian",
    "simpson",
    "sweep",
    "token_cs_loss",
    "token_stream",
    "toy_example_report",
    "train",
    "uniformity_taylor",
    "uniformity_term",
    "write_embeddings",
    "write_token_batch",
]
