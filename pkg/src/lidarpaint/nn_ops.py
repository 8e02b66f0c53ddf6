"""Minimal conv-net primitives on numpy arrays, each with a paired backward.

Tensors are channels-last: (B, H, W, C). Convolutions use zero "half"
padding (pad = kernel // 2), so stride 1 preserves the spatial size and
stride 2 yields ceil(H / 2). Forward passes return an opaque cache that the
matching backward consumes; backwards return gradients for every input.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def he_init(rng, kh, kw, c_in, c_out, gain: float = 2.0) -> np.ndarray:
    std = np.sqrt(gain / (kh * kw * c_in))
    return rng.normal(0.0, std, (kh, kw, c_in, c_out))


def conv2d_forward(x, w, b, stride: int = 1):
    """Zero-padded cross-correlation; returns (out (B, Ho, Wo, Cout), cache)."""
    bsz, h, wd, c_in = x.shape
    kh, kw, wc_in, c_out = w.shape
    if wc_in != c_in:
        raise ValueError(f"conv channels mismatch: input {c_in}, weight {wc_in}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1
    out = np.broadcast_to(b, (bsz, ho, wo, c_out)).copy()
    for i in range(kh):
        for j in range(kw):
            tap = xp[:, i:i + stride * (ho - 1) + 1:stride,
                     j:j + stride * (wo - 1) + 1:stride, :]
            out += tap @ w[i, j]
    cache = (xp, w, stride, x.shape, (ho, wo))
    return out, cache


def conv2d_backward(grad_out, cache):
    xp, w, stride, x_shape, (ho, wo) = cache
    kh, kw, c_in, c_out = w.shape
    ph, pw = kh // 2, kw // 2
    grad_w = np.zeros_like(w)
    grad_xp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + stride * (ho - 1) + 1, stride)
            cols = slice(j, j + stride * (wo - 1) + 1, stride)
            tap = xp[:, rows, cols, :]
            grad_w[i, j] = np.tensordot(tap, grad_out, axes=([0, 1, 2], [0, 1, 2]))
            grad_xp[:, rows, cols, :] += grad_out @ w[i, j].T
    grad_b = grad_out.sum(axis=(0, 1, 2))
    h, wd = x_shape[1], x_shape[2]
    grad_x = grad_xp[:, ph:ph + h, pw:pw + wd, :]
    return grad_x, grad_w, grad_b


def silu_forward(x):
    s = expit(x)
    return x * s, (x, s)


def silu_backward(grad, cache):
    x, s = cache
    return grad * s * (1.0 + x * (1.0 - s))


def sigmoid_forward(x):
    y = expit(x)
    return y, y


def sigmoid_backward(grad, y):
    return grad * y * (1.0 - y)


def upsample2_forward(x):
    """Nearest-neighbor 2x upsampling on the spatial axes."""
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2), x.shape


def upsample2_backward(grad, x_shape):
    b, h, w, c = x_shape
    return grad.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4))


def crop_to(x, h, w):
    """Trim trailing rows/cols (after upsampling odd sizes); returns view."""
    return x[:, :h, :w, :]


def crop_to_backward(grad, x_shape):
    b, h, w, c = x_shape
    out = np.zeros(x_shape)
    out[:, :grad.shape[1], :grad.shape[2], :] = grad
    return out


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """Classic sin/cos positional features of a scalar step index."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])
