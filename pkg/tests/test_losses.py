"""InfoNCE, alignment/uniformity terms, the combined objective, decomposition."""

import math

import numpy as np
import pytest

from csalign import (
    DimensionMismatch,
    EmptySet,
    KernelParams,
    LossConfig,
    NonOverlappingError,
    NotNormalized,
    PairCountMismatch,
    RandomSource,
    alignment_term,
    cs_aligner_objective,
    cs_divergence,
    decomposed_objective,
    gaussian_kernel,
    infonce,
    l2_normalize_rows,
    prior_l2,
    uniformity_taylor,
    uniformity_term,
)

from conftest import naive_infonce, random_matrix


def unit_rows(rng: RandomSource, n: int, d: int) -> np.ndarray:
    return l2_normalize_rows(rng.normals(n * d).reshape(n, d))


# ---------------------------------------------------------------------------
# LossConfig


def test_loss_config_defaults():
    cfg = LossConfig()
    assert cfg.tau == 0.07
    assert cfg.cs_weight == 0.01
    assert cfg.alpha == 2.0
    assert cfg.sigma == 1.0


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(tau=0.0)
    with pytest.raises(ValueError):
        LossConfig(cs_weight=-0.1)
    with pytest.raises(ValueError):
        LossConfig(alpha=0.0)
    with pytest.raises(ValueError):
        LossConfig(sigma=-1.0)


# ---------------------------------------------------------------------------
# InfoNCE


def test_infonce_single_pair_zero():
    x = [[1.0, 0.0]]
    y = [[0.0, 1.0]]
    assert infonce(x, y, tau=0.5) == 0.0


def test_infonce_orthonormal_example():
    x = [[1.0, 0.0], [0.0, 1.0]]
    value = infonce(x, x, tau=1.0)
    assert value == pytest.approx(math.log(1.0 + math.exp(-1.0)), abs=1e-12)
    assert value == pytest.approx(0.31326, abs=1e-5)


def test_infonce_identical_rows_log2():
    x = [[1.0, 0.0], [1.0, 0.0]]
    assert infonce(x, x, tau=1.0) == pytest.approx(math.log(2.0), abs=1e-12)


def test_infonce_matches_naive_oracle(rng):
    for _ in range(5):
        x = unit_rows(rng, 7, 4)
        y = unit_rows(rng, 7, 4)
        assert infonce(x, y, tau=0.07) == pytest.approx(
            naive_infonce(x, y, 0.07), abs=1e-10
        )
        assert infonce(x, y, tau=1.3) == pytest.approx(
            naive_infonce(x, y, 1.3), abs=1e-12
        )


def test_infonce_non_negative(rng):
    for _ in range(20):
        x = unit_rows(rng, 6, 3)
        y = unit_rows(rng, 6, 3)
        assert infonce(x, y, tau=0.07) >= 0.0


def test_infonce_symmetric_in_arguments(rng):
    x = unit_rows(rng, 9, 5)
    y = unit_rows(rng, 9, 5)
    assert infonce(x, y, tau=0.07) == infonce(y, x, tau=0.07)


def test_infonce_permutation_invariant(rng):
    x = unit_rows(rng, 8, 4)
    y = unit_rows(rng, 8, 4)
    perm = RandomSource(3).permutation(8)
    assert infonce(x[perm], y[perm], tau=0.07) == pytest.approx(
        infonce(x, y, tau=0.07), abs=1e-12
    )


def test_infonce_requires_normalized_rows(rng):
    x = unit_rows(rng, 4, 3)
    bad = x.copy()
    bad[2] *= 1.001  # off unit norm by far more than the 1e-6 gate
    with pytest.raises(NotNormalized) as err:
        infonce(bad, x, 0.07)
    assert err.value.row == 2
    with pytest.raises(NotNormalized):
        infonce(x, bad, 0.07)


def test_infonce_errors(rng):
    x = unit_rows(rng, 4, 3)
    with pytest.raises(PairCountMismatch):
        infonce(x, x[:3], 0.07)
    with pytest.raises(EmptySet):
        infonce(np.zeros((0, 3)), np.zeros((0, 3)), 0.07)
    with pytest.raises(ValueError):
        infonce(x, x, tau=0.0)


# ---------------------------------------------------------------------------
# alignment / uniformity


def test_alignment_examples(rng):
    x = unit_rows(rng, 5, 3)
    assert alignment_term(x, x.copy(), 2.0) == 0.0
    assert alignment_term([[0.0, 0.0]], [[2.0, 0.0]], 2.0) == pytest.approx(4.0, abs=1e-12)
    assert alignment_term([[0.0, 0.0]], [[2.0, 0.0]], 1.0) == pytest.approx(2.0, abs=1e-12)


def test_alignment_equals_prior_l2_at_alpha_two(rng):
    x = random_matrix(rng, 12, 5)
    y = random_matrix(rng, 12, 5)
    assert alignment_term(x, y, 2.0) == prior_l2(x, y)  # bitwise


def test_prior_l2_examples(rng):
    x = random_matrix(rng, 6, 4)
    assert prior_l2(x, x.copy()) == 0.0
    assert prior_l2([[0.0]], [[2.0]]) == pytest.approx(4.0, abs=1e-12)
    with pytest.raises(PairCountMismatch):
        prior_l2(x, x[:2])


def test_kernel_taylor_connection(rng):
    # 1 - kernel tracks the scaled squared distance when that scale is small
    sigma = 2.0
    for _ in range(40):
        u = rng.normals(4) * 0.2
        v = u + rng.normals(4) * 0.15
        scaled = float(((u - v) ** 2).sum()) / (2.0 * sigma * sigma)
        if scaled > 0.05:
            continue
        kernel = gaussian_kernel(u, v, KernelParams(sigma=sigma))
        assert abs((1.0 - kernel) - scaled) < 2e-3


def test_uniformity_coincident_zero():
    x = np.ones((3, 2))
    assert uniformity_term(x, x, t=1.0) == 0.0
    assert uniformity_taylor(x, x, t=1.0) == 0.0


def test_uniformity_single_pair_example():
    x = [[1.0, 0.0]]
    y = [[0.0, 1.0]]  # squared distance 2
    assert uniformity_term(x, y, t=1.0) == pytest.approx(-2.0, abs=1e-12)
    assert uniformity_taylor(x, y, t=1.0) == pytest.approx(-2.0, abs=1e-12)


def test_uniformity_matches_naive_loop(rng):
    x = random_matrix(rng, 8, 2)
    y = random_matrix(rng, 8, 2)
    t = 0.9
    acc = 0.0
    for i in range(8):
        for j in range(8):
            acc += math.exp(-t * float(((x[i] - y[j]) ** 2).sum()))
    assert uniformity_term(x, y, t) == pytest.approx(math.log(acc / 64.0), abs=1e-12)


def test_uniformity_never_positive(rng):
    for _ in range(20):
        x = random_matrix(rng, 6, 3)
        y = random_matrix(rng, 9, 3)
        assert uniformity_term(x, y, t=1.0) <= 0.0


def test_uniformity_taylor_is_first_order(rng):
    x = random_matrix(rng, 6, 3)
    y = random_matrix(rng, 6, 3)
    exact = uniformity_term(x, y, t=0.001)
    approx = uniformity_taylor(x, y, t=0.001)
    assert abs(exact - approx) < 1e-4
    # Jensen: log of a mean dominates the mean of the logs
    assert uniformity_taylor(x, y, t=1.0) <= uniformity_term(x, y, t=1.0)


def test_uniformity_errors(rng):
    x = random_matrix(rng, 4, 3)
    with pytest.raises(EmptySet):
        uniformity_term(np.zeros((0, 3)), x, t=1.0)
    with pytest.raises(ValueError):
        uniformity_term(x, x, t=0.0)


# ---------------------------------------------------------------------------
# combined objective


def test_objective_lambda_zero_is_pure_infonce(rng):
    x = unit_rows(rng, 8, 4)
    y = unit_rows(rng, 8, 4)
    report = cs_aligner_objective(x, y, LossConfig(cs_weight=0.0))
    assert report.total == report.infonce
    assert report.total == infonce(x, y, 0.07)


def test_objective_identical_sets(rng):
    x = unit_rows(rng, 8, 4)
    report = cs_aligner_objective(x, x.copy(), LossConfig())
    assert report.cs == 0.0
    assert report.total == report.infonce


def test_objective_recombination(rng):
    x = unit_rows(rng, 10, 5)
    y = unit_rows(rng, 10, 5)
    cfg = LossConfig(cs_weight=0.01)
    report = cs_aligner_objective(x, y, cfg)
    assert report.infonce == infonce(x, y, cfg.tau)
    assert report.cs == cs_divergence(x, y, KernelParams(sigma=cfg.sigma))
    assert report.total == pytest.approx(report.infonce + 0.01 * report.cs, abs=1e-12)


def test_objective_unpaired_changes_only_cs(rng):
    x = unit_rows(rng, 8, 4)
    y = unit_rows(rng, 8, 4)
    ux = unit_rows(rng, 5, 4)
    uy = unit_rows(rng, 3, 4)
    base = cs_aligner_objective(x, y, LossConfig())
    augmented = cs_aligner_objective(x, y, LossConfig(), unpaired_x=ux, unpaired_y=uy)
    assert augmented.infonce == base.infonce  # bitwise: same paired rows
    assert augmented.cs != base.cs
    assert augmented.cs == cs_divergence(
        np.vstack([x, ux]), np.vstack([y, uy]), KernelParams()
    )


def test_objective_non_overlap_is_error():
    x = np.array([[1.0, 0.0]])
    y = np.array([[0.0, 1.0]])
    with pytest.raises(NonOverlappingError):
        cs_aligner_objective(x, y, LossConfig(sigma=1e-3))


# ---------------------------------------------------------------------------
# decomposition


def test_decomposition_regrouping_identity():
    for trial in range(100):
        rng = RandomSource(40000 + trial)
        n = rng.randint(2, 24)
        d = rng.randint(1, 8)
        x = rng.normals(n * d).reshape(n, d)
        y = rng.normals(n * d).reshape(n, d)
        t = 0.25 + rng.uniform() * 2.0
        report = decomposed_objective(x, y, t=t, alpha=2.0)
        sigma = 1.0 / math.sqrt(2.0 * t)
        recombined = (
            report.alignment
            + report.cross_uniformity
            + cs_divergence(x, y, KernelParams(sigma=sigma))
        )
        assert report.total == pytest.approx(recombined, abs=1e-10)
        assert report.cs == pytest.approx(
            cs_divergence(x, y, KernelParams(sigma=sigma)), abs=1e-10
        )


def test_decomposition_identical_inputs(rng):
    x = random_matrix(rng, 7, 3)
    report = decomposed_objective(x, x.copy(), t=1.0)
    assert report.alignment == 0.0
    assert report.cross_uniformity == report.uniformity_x == report.uniformity_y
    assert report.total == pytest.approx(report.uniformity_x, abs=1e-12)


def test_decomposition_coincident_points_zero():
    x = np.ones((4, 2))
    report = decomposed_objective(x, x.copy(), t=1.0)
    assert report.total == 0.0


def test_decomposition_pair_count_guard(rng):
    x = random_matrix(rng, 5, 3)
    with pytest.raises(PairCountMismatch):
        decomposed_objective(x, x[:4], t=1.0)
