"""Image losses, SSIM, and gradient correctness."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarpaint.losses import (LAMBDA_NOVEL, NOVEL_WEIGHTS, LossWeights,
                               image_metrics, l1_with_grad, l2_with_grad, mse,
                               novel_view_loss, original_view_loss,
                               perceptual_with_grad, psnr, reconstruction_loss,
                               ssim, ssim_with_grad)

from oracles import fd_gradient, ssim_oracle


def _pair(seed, shape=(16, 18, 3), noise=0.15):
    rng = np.random.default_rng(seed)
    a = rng.random(shape)
    b = np.clip(a + rng.normal(0, noise, shape), 0, 1)
    return a, b


# --- elementwise losses ------------------------------------------------------

def test_l1_l2_identical_inputs():
    a, _ = _pair(0)
    assert l1_with_grad(a, a)[0] == 0.0
    assert l2_with_grad(a, a)[0] == 0.0


def test_l1_l2_zeros_vs_ones():
    z = np.zeros((12, 12, 3))
    o = np.ones((12, 12, 3))
    assert l1_with_grad(z, o)[0] == pytest.approx(1.0)
    assert l2_with_grad(z, o)[0] == pytest.approx(1.0)


def test_l1_l2_match_scalar_loop_oracle():
    a, b = _pair(1, shape=(6, 7, 3))
    want_l1 = want_l2 = 0.0
    for x, y in zip(a.reshape(-1), b.reshape(-1)):
        want_l1 += abs(x - y)
        want_l2 += (x - y) ** 2
    want_l1 /= a.size
    want_l2 /= a.size
    assert l1_with_grad(a, b)[0] == pytest.approx(want_l1, abs=1e-12)
    assert l2_with_grad(a, b)[0] == pytest.approx(want_l2, abs=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_l1_l2_symmetric(seed):
    a, b = _pair(seed, shape=(8, 8, 3))
    assert l1_with_grad(a, b)[0] == pytest.approx(l1_with_grad(b, a)[0])
    assert l2_with_grad(a, b)[0] == pytest.approx(l2_with_grad(b, a)[0])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        l1_with_grad(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_psnr_values():
    a = np.zeros((8, 8, 3))
    assert psnr(a, a) == np.inf
    b = np.full((8, 8, 3), 0.1)
    assert psnr(a, b) == pytest.approx(-10 * np.log10(0.01))
    assert mse(a, b) == pytest.approx(0.01)


# --- ssim --------------------------------------------------------------------

def test_ssim_identical_is_one():
    a, _ = _pair(2)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_images_closed_form():
    z = np.zeros((16, 16, 3))
    o = np.ones((16, 16, 3))
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    want = (c1 * c2) / ((1 + c1) * c2)  # mu_a=0, mu_b=1, all variances zero
    assert ssim(z, o) == pytest.approx(want, rel=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=5, deadline=None)
def test_ssim_matches_sliding_window_oracle(seed):
    a, b = _pair(seed, shape=(14, 15, 3))
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-9)


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_ssim_symmetric(seed):
    a, b = _pair(seed, shape=(13, 13, 3))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_below_window_rejected():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 16, 3)), np.zeros((10, 16, 3)))


# --- gradients ---------------------------------------------------------------

@pytest.mark.parametrize("loss_fn", [l1_with_grad, l2_with_grad,
                                     ssim_with_grad, perceptual_with_grad])
def test_loss_gradients_match_finite_differences(loss_fn):
    a, b = _pair(3, shape=(14, 14, 3))
    # keep l1 away from its |x| kink
    a = np.where(np.abs(a - b) < 1e-3, b + 5e-3, a)
    _, grad = loss_fn(a, b)
    fd = fd_gradient(lambda x: loss_fn(x, b)[0], a.copy())
    err = np.abs(fd - grad)
    tol = 1e-6 + 1e-3 * np.maximum(np.abs(fd), np.abs(grad))
    assert np.all(err <= tol)


# --- composite losses --------------------------------------------------------

def test_reconstruction_loss_zero_on_match():
    a, _ = _pair(4)
    total, grad, parts = original_view_loss(a, a)
    assert total == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(grad, 0.0, atol=1e-9)


def test_novel_loss_zero_lambda():
    a, b = _pair(5)
    total, grad, parts = novel_view_loss(a, b, lambda_novel=0.0)
    assert total == 0.0
    assert np.all(grad == 0.0)


def test_composite_weights_match_component_oracle():
    a, b = _pair(6)
    l1v = l1_with_grad(a, b)[0]
    sv = ssim_with_grad(a, b)[0]
    pv = perceptual_with_grad(a, b)[0]

    total, _, parts = original_view_loss(a, b)
    assert total == pytest.approx(l1v + 0.2 * (1 - sv) + pv, rel=1e-12)

    ntotal, _, _ = novel_view_loss(a, b, lambda_novel=LAMBDA_NOVEL)
    assert ntotal == pytest.approx(
        LAMBDA_NOVEL * (l1v + 0.1 * (1 - sv) + pv), rel=1e-12)
    assert (NOVEL_WEIGHTS.l1, NOVEL_WEIGHTS.ssim, NOVEL_WEIGHTS.perceptual,
            NOVEL_WEIGHTS.geometry) == (1.0, 0.1, 1.0, 1.0)


def test_geometry_hook_default_zero_and_pluggable():
    a, b = _pair(7)
    base, base_grad, _ = original_view_loss(a, b)
    hook = lambda pred: (0.25, np.full_like(pred, 0.01))
    bumped, grad, parts = original_view_loss(a, b, geometry_term=hook)
    assert bumped == pytest.approx(base + 0.25)
    assert parts["geometry"] == 0.25
    assert np.allclose(grad - base_grad, 0.01, atol=1e-12)


def test_losses_nonnegative():
    for seed in range(5):
        a, b = _pair(seed)
        total, _, parts = original_view_loss(a, b)
        assert total >= 0.0
        assert all(v >= 0.0 for v in parts.values())


def test_image_metrics_keys():
    a, b = _pair(8)
    m = image_metrics(a, b)
    assert set(m) == {"psnr", "ssim", "l1"}
    assert m["ssim"] == pytest.approx(ssim(a, b))
