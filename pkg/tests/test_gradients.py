"""Analytic gradients versus central finite differences, plus exact identities."""

import numpy as np
import pytest

from csalign import (
    KernelParams,
    LossConfig,
    RandomSource,
    finite_difference_check,
    finite_difference_report,
    grad_cs,
    grad_infonce,
    grad_normalize_chain,
    grad_objective,
    grad_token_cs,
    infonce,
    l2_normalize_rows,
    objective_value,
)

from conftest import random_matrix

FD_TOL = 1e-4


def unit_rows(rng: RandomSource, n: int, d: int) -> np.ndarray:
    return l2_normalize_rows(rng.normals(n * d).reshape(n, d))


# ---------------------------------------------------------------------------
# finite-difference agreement, all losses


@pytest.mark.parametrize("seed", [1, 2, 3])
@pytest.mark.parametrize("n,d", [(4, 2), (8, 3), (6, 7)])
def test_fd_cs(seed, n, d):
    rng = RandomSource(seed * 1000 + n)
    x = random_matrix(rng, n, d)
    y = random_matrix(rng, n + 1, d) + 0.4
    report = finite_difference_check("cs", (x, y), KernelParams())
    assert report.max_rel_err < FD_TOL


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.5])
def test_fd_cs_sigma_sweep(sigma):
    # unit rows: the regime the default step is conditioned for (narrow
    # kernels on wide raw data drown central differences in round-off)
    rng = RandomSource(77)
    x = unit_rows(rng, 6, 3)
    y = unit_rows(rng, 9, 3)
    report = finite_difference_check("cs", (x, y), KernelParams(sigma=sigma))
    assert report.max_rel_err < FD_TOL


@pytest.mark.parametrize("seed", [5, 6, 7])
def test_fd_infonce(seed):
    rng = RandomSource(seed)
    x = unit_rows(rng, 8, 4)
    y = unit_rows(rng, 8, 4)
    report = finite_difference_check("infonce", (x, y), 0.07)
    assert report.max_rel_err < FD_TOL


@pytest.mark.parametrize("seed", [11, 12])
def test_fd_objective(seed):
    rng = RandomSource(seed)
    x = random_matrix(rng, 7, 4)
    y = random_matrix(rng, 7, 4)
    report = finite_difference_check("objective", (x, y), LossConfig(cs_weight=0.05))
    assert report.max_rel_err < FD_TOL


def test_fd_objective_with_unpaired():
    rng = RandomSource(13)
    x = random_matrix(rng, 6, 3)
    y = random_matrix(rng, 6, 3)
    ux = random_matrix(rng, 4, 3)
    uy = random_matrix(rng, 2, 3)
    report = finite_difference_check(
        "objective", (x, y, ux, uy), LossConfig(cs_weight=0.1)
    )
    assert report.max_rel_err < FD_TOL


def test_fd_token_ragged():
    rng = RandomSource(21)
    vision = [random_matrix(rng, v, 3) for v in (3, 5)]
    text = [random_matrix(rng, l, 3) for l in (4, 2)]
    report = finite_difference_check("token", (vision, text), KernelParams())
    assert report.max_rel_err < FD_TOL


def test_fd_report_fields():
    rng = RandomSource(31)
    x = random_matrix(rng, 4, 2)
    y = random_matrix(rng, 4, 2)
    report = finite_difference_check("cs", (x, y), KernelParams())
    assert report.step == 1e-5
    assert report.coords_checked > 0
    name, row, col = report.worst
    assert name in ("x", "y")
    assert 0 <= row < 4 and 0 <= col < 2


def test_fd_step_bounds():
    rng = RandomSource(32)
    x = random_matrix(rng, 3, 2)
    y = random_matrix(rng, 3, 2)
    with pytest.raises(ValueError):
        finite_difference_check("cs", (x, y), KernelParams(), step=1e-2)
    with pytest.raises(ValueError):
        finite_difference_check("cs", (x, y), KernelParams(), step=1e-9)


def test_fd_detects_corrupted_gradient():
    # mutation test: a 10% error in one coordinate must not slip through
    from csalign import cs_divergence

    rng = RandomSource(41)
    inputs = {"x": random_matrix(rng, 5, 3), "y": random_matrix(rng, 5, 3)}
    pair = grad_cs(inputs["x"], inputs["y"], KernelParams())
    corrupted = {"x": pair.d_x.copy(), "y": pair.d_y.copy()}
    corrupted["x"][2, 1] *= 1.10
    report = finite_difference_report(
        lambda: cs_divergence(inputs["x"], inputs["y"], KernelParams()),
        inputs,
        corrupted,
    )
    assert report.max_rel_err > 0.05
    assert report.worst == ("x", 2, 1)


# ---------------------------------------------------------------------------
# exact gradient identities


def test_grad_cs_zero_at_identical_sets(rng):
    x = random_matrix(rng, 9, 4)
    pair = grad_cs(x, x.copy(), KernelParams())
    assert float(np.max(np.abs(pair.d_x))) < 1e-10
    assert float(np.max(np.abs(pair.d_y))) < 1e-10


def test_grad_cs_swap_antisymmetry(rng):
    x = random_matrix(rng, 6, 3)
    y = random_matrix(rng, 10, 3)
    fwd = grad_cs(x, y, KernelParams(sigma=0.8))
    bwd = grad_cs(y, x, KernelParams(sigma=0.8))
    np.testing.assert_array_equal(fwd.d_x, bwd.d_y)
    np.testing.assert_array_equal(fwd.d_y, bwd.d_x)


def test_grad_cs_translation_balance(rng):
    x = random_matrix(rng, 8, 3)
    y = random_matrix(rng, 5, 3)
    pair = grad_cs(x, y, KernelParams())
    drift = pair.d_x.sum(axis=0) + pair.d_y.sum(axis=0)
    assert float(np.max(np.abs(drift))) < 1e-9


def test_grad_infonce_permutation_equivariance(rng):
    x = unit_rows(rng, 7, 4)
    y = unit_rows(rng, 7, 4)
    perm = RandomSource(9).permutation(7)
    base = grad_infonce(x, y, 0.07)
    permuted = grad_infonce(x[perm], y[perm], 0.07)
    np.testing.assert_allclose(permuted.d_x, base.d_x[perm], atol=1e-12)
    np.testing.assert_allclose(permuted.d_y, base.d_y[perm], atol=1e-12)


def test_grad_infonce_single_pair_tangent_zero():
    # one pair: loss is identically zero, so tangential derivatives vanish
    x = np.array([[0.6, 0.8]])
    y = np.array([[1.0, 0.0]])
    pair = grad_infonce(x, y, 0.07)
    tangent_x = np.array([-0.8, 0.6])
    tangent_y = np.array([0.0, 1.0])
    assert abs(float(pair.d_x[0] @ tangent_x)) < 1e-8
    assert abs(float(pair.d_y[0] @ tangent_y)) < 1e-8


# ---------------------------------------------------------------------------
# normalization chain rule


def test_chain_kills_radial_component(rng):
    raw = random_matrix(rng, 5, 4)
    out = grad_normalize_chain(raw, raw * 2.7)  # upstream parallel to rows
    assert float(np.max(np.abs(out))) < 1e-12


def test_chain_preserves_tangent_at_unit_norm():
    raw = np.array([[1.0, 0.0, 0.0]])
    upstream = np.array([[0.0, 2.0, -1.0]])
    out = grad_normalize_chain(raw, upstream)
    np.testing.assert_allclose(out, upstream, atol=1e-12)


def test_chain_output_orthogonal_to_rows(rng):
    raw = random_matrix(rng, 8, 5)
    upstream = random_matrix(rng, 8, 5)
    out = grad_normalize_chain(raw, upstream)
    dots = (out * raw).sum(axis=1)
    assert float(np.max(np.abs(dots))) < 1e-12


def test_chain_scales_inverse_norm(rng):
    raw = random_matrix(rng, 4, 3)
    upstream = random_matrix(rng, 4, 3)
    doubled = grad_normalize_chain(2.0 * raw, upstream)
    single = grad_normalize_chain(raw, upstream)
    np.testing.assert_allclose(doubled, single / 2.0, atol=1e-12)


# ---------------------------------------------------------------------------
# composed objective gradient


def test_grad_objective_lambda_zero_equals_chained_infonce(rng):
    # grad_infonce re-normalizes its (already unit) inputs, so the two code
    # paths round differently in the last bit; agreement is to float dust
    x = random_matrix(rng, 6, 4)
    y = random_matrix(rng, 6, 4)
    pair = grad_objective(x, y, LossConfig(cs_weight=0.0))
    nx = l2_normalize_rows(x)
    ny = l2_normalize_rows(y)
    inf = grad_infonce(nx, ny, 0.07)
    np.testing.assert_allclose(pair.d_x, grad_normalize_chain(x, inf.d_x), atol=1e-12)
    np.testing.assert_allclose(pair.d_y, grad_normalize_chain(y, inf.d_y), atol=1e-12)


def test_grad_objective_linear_in_lambda(rng):
    x = random_matrix(rng, 7, 3)
    y = random_matrix(rng, 7, 3)
    g0 = grad_objective(x, y, LossConfig(cs_weight=0.0))
    g1 = grad_objective(x, y, LossConfig(cs_weight=1.0))
    gm = grad_objective(x, y, LossConfig(cs_weight=0.37))
    expect_x = g0.d_x + 0.37 * (g1.d_x - g0.d_x)
    expect_y = g0.d_y + 0.37 * (g1.d_y - g0.d_y)
    assert float(np.max(np.abs(gm.d_x - expect_x))) < 1e-10
    assert float(np.max(np.abs(gm.d_y - expect_y))) < 1e-10


def test_grad_objective_unpaired_rows_get_only_cs_gradient(rng):
    x = random_matrix(rng, 5, 3)
    y = random_matrix(rng, 5, 3)
    ux = random_matrix(rng, 3, 3)
    uy = random_matrix(rng, 4, 3)
    cfg = LossConfig(cs_weight=0.0)
    pair = grad_objective(x, y, cfg, unpaired_x=ux, unpaired_y=uy)
    # with the divergence weight at zero, pool rows feel nothing at all
    assert float(np.max(np.abs(pair.d_x[5:]))) == 0.0
    assert float(np.max(np.abs(pair.d_y[5:]))) == 0.0
    # paired rows still carry the contrastive gradient
    assert float(np.max(np.abs(pair.d_x[:5]))) > 0.0


def test_objective_value_matches_loss_report(rng):
    x = random_matrix(rng, 6, 3)
    y = random_matrix(rng, 6, 3)
    cfg = LossConfig(cs_weight=0.02)
    value = objective_value(x, y, cfg)
    nx = l2_normalize_rows(x)
    ny = l2_normalize_rows(y)
    from csalign import cs_aligner_objective

    assert value == pytest.approx(cs_aligner_objective(nx, ny, cfg).total, abs=1e-12)


def test_grad_token_matches_per_sample_cs(rng):
    vision = [random_matrix(rng, 3, 2), random_matrix(rng, 4, 2)]
    text = [random_matrix(rng, 2, 2), random_matrix(rng, 5, 2)]
    d_v, d_t = grad_token_cs(vision, text, KernelParams())
    for i in range(2):
        single = grad_cs(vision[i], text[i], KernelParams())
        np.testing.assert_allclose(d_v[i], single.d_x / 2.0, atol=1e-15)
        np.testing.assert_allclose(d_t[i], single.d_y / 2.0, atol=1e-15)
