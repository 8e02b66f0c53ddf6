"""Image losses with analytic gradients: L1, SSIM, multi-scale perceptual.

All losses take float images shaped (H, W, C) and return gradients with
respect to the first argument (the prediction). SSIM follows the standard
11x11 Gaussian window (sigma 1.5, C1 = 0.01^2, C2 = 0.03^2), evaluated in
valid mode and averaged over channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
_HALF = SSIM_WINDOW // 2


def _window() -> np.ndarray:
    i = np.arange(SSIM_WINDOW, dtype=np.float64) - _HALF
    w = np.exp(-(i * i) / (2.0 * SSIM_SIGMA ** 2))
    return w / w.sum()


_W1D = _window()


def _filt_valid(img2d: np.ndarray) -> np.ndarray:
    """Separable Gaussian filter, valid region only ((H-10) x (W-10))."""
    out = correlate1d(img2d, _W1D, axis=0, mode="constant")
    out = correlate1d(out, _W1D, axis=1, mode="constant")
    return out[_HALF:-_HALF, _HALF:-_HALF]


def _filt_adjoint(grad2d: np.ndarray, height: int, width: int) -> np.ndarray:
    """Adjoint of _filt_valid: zero-pad back to (H, W), filter again."""
    padded = np.zeros((height, width))
    padded[_HALF:height - _HALF, _HALF:width - _HALF] = grad2d
    out = correlate1d(padded, _W1D, axis=0, mode="constant")
    return correlate1d(out, _W1D, axis=1, mode="constant")


def _as_image(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W, C) image, got shape {a.shape}")
    return a


def _check_pair(a, b):
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def l1_with_grad(a, b):
    a, b = _check_pair(a, b)
    diff = a - b
    value = float(np.mean(np.abs(diff)))
    return value, np.sign(diff) / diff.size


def l2_with_grad(a, b):
    a, b = _check_pair(a, b)
    diff = a - b
    value = float(np.mean(diff * diff))
    return value, 2.0 * diff / diff.size


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images on the [0, 1] scale."""
    m = mse(a, b)
    if m == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / m))


def _ssim_channel(a2, b2, need_grad):
    h, w = a2.shape
    mu_a = _filt_valid(a2)
    mu_b = _filt_valid(b2)
    e_a2 = _filt_valid(a2 * a2)
    e_b2 = _filt_valid(b2 * b2)
    e_ab = _filt_valid(a2 * b2)
    var_a = e_a2 - mu_a * mu_a
    var_b = e_b2 - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    n1 = 2.0 * mu_a * mu_b + SSIM_C1
    n2 = 2.0 * cov + SSIM_C2
    d1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    d2 = var_a + var_b + SSIM_C2
    s_map = (n1 * n2) / (d1 * d2)
    if not need_grad:
        return s_map, None
    inv_dd = 1.0 / (d1 * d2)
    ds_de_ab = 2.0 * n1 * inv_dd
    ds_de_a2 = -s_map / d2
    ds_dmu_a = 2.0 * mu_b * (n2 - n1) * inv_dd + 2.0 * mu_a * s_map * (1.0 / d2 - 1.0 / d1)
    grad = (_filt_adjoint(ds_dmu_a, h, w)
            + 2.0 * a2 * _filt_adjoint(ds_de_a2, h, w)
            + b2 * _filt_adjoint(ds_de_ab, h, w))
    return s_map, grad


def _ssim_impl(a, b, need_grad):
    a, b = _check_pair(a, b)
    h, w, c = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(
            f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window")
    total = 0.0
    grad = np.zeros_like(a) if need_grad else None
    n_pos = (h - 2 * _HALF) * (w - 2 * _HALF) * c
    for ch in range(c):
        s_map, g = _ssim_channel(a[:, :, ch], b[:, :, ch], need_grad)
        total += float(s_map.sum())
        if need_grad:
            grad[:, :, ch] = g / n_pos
    return total / n_pos, grad


def ssim(a, b) -> float:
    value, _ = _ssim_impl(a, b, need_grad=False)
    return value


def ssim_with_grad(a, b):
    return _ssim_impl(a, b, need_grad=True)


def _avgpool(a):
    h2, w2 = a.shape[0] // 2, a.shape[1] // 2
    c = a.shape[2]
    return a[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2, c).mean(axis=(1, 3))


def _avgpool_backward(grad, height, width):
    h2, w2, c = grad.shape
    out = np.zeros((height, width, c))
    out[:2 * h2, :2 * w2] = np.repeat(np.repeat(grad, 2, axis=0), 2, axis=1) * 0.25
    return out


def perceptual_with_grad(a, b):
    """Structure term: mean of (1 - ssim) over an average-pool pyramid.

    Scales halve until another halving would drop below the ssim window.
    """
    a, b = _check_pair(a, b)
    pyr_a, pyr_b = [a], [b]
    while min(pyr_a[-1].shape[0] // 2, pyr_a[-1].shape[1] // 2) >= SSIM_WINDOW:
        pyr_a.append(_avgpool(pyr_a[-1]))
        pyr_b.append(_avgpool(pyr_b[-1]))
    n = len(pyr_a)
    value = 0.0
    grads = []
    for pa, pb in zip(pyr_a, pyr_b):
        s, g = _ssim_impl(pa, pb, need_grad=True)
        value += (1.0 - s) / n
        grads.append(-g / n)
    grad = grads[-1]
    for level in range(n - 2, -1, -1):
        grad = _avgpool_backward(grad, pyr_a[level].shape[0], pyr_a[level].shape[1])
        grad += grads[level]
    return value, grad


def perceptual(a, b) -> float:
    value, _ = perceptual_with_grad(a, b)
    return value


@dataclass(frozen=True)
class LossWeights:
    """Weights for (L1, 1-SSIM, perceptual, geometry) terms."""

    l1: float = 1.0
    ssim: float = 0.2
    perceptual: float = 1.0
    geometry: float = 1.0


NOVEL_WEIGHTS = LossWeights(l1=1.0, ssim=0.1, perceptual=1.0, geometry=1.0)
LAMBDA_NOVEL = 0.2


def reconstruction_loss(pred, target, weights: LossWeights = None,
                        geometry_term=None, scale: float = 1.0):
    """Weighted photometric loss; returns (total, grad wrt pred, parts).

    geometry_term, when given, is a callable pred -> (value, grad) appended
    with the geometry weight; by default it contributes nothing.
    """
    weights = weights or LossWeights()
    v_l1, g_l1 = l1_with_grad(pred, target)
    v_ss, g_ss = ssim_with_grad(pred, target)
    v_pc, g_pc = perceptual_with_grad(pred, target)
    total = weights.l1 * v_l1 + weights.ssim * (1.0 - v_ss) + weights.perceptual * v_pc
    grad = weights.l1 * g_l1 - weights.ssim * g_ss + weights.perceptual * g_pc
    parts = {"l1": v_l1, "ssim": v_ss, "perceptual": v_pc, "geometry": 0.0}
    if geometry_term is not None:
        v_g, g_g = geometry_term(pred)
        total += weights.geometry * v_g
        grad = grad + weights.geometry * g_g
        parts["geometry"] = v_g
    return scale * total, scale * grad, parts


def original_view_loss(pred, target, geometry_term=None):
    """Loss for captured-trajectory views: L1 + 0.2 (1-SSIM) + perceptual + geo."""
    return reconstruction_loss(pred, target, LossWeights(), geometry_term)


def novel_view_loss(pred, target, geometry_term=None, lambda_novel: float = LAMBDA_NOVEL):
    """Down-weighted loss for expanded-view guidance targets."""
    return reconstruction_loss(pred, target, NOVEL_WEIGHTS, geometry_term,
                               scale=lambda_novel)


def image_metrics(pred, target) -> dict:
    """PSNR / SSIM / L1 summary used by evaluation reports."""
    v_l1, _ = l1_with_grad(pred, target)
    return {"psnr": psnr(pred, target), "ssim": ssim(pred, target), "l1": v_l1}
