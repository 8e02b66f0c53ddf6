"""Convolution and activation primitives: shapes, gradients, adjoints."""

import numpy as np
import pytest

from lidarpaint.nn_ops import (conv2d_backward, conv2d_forward, crop_to,
                               crop_to_backward, he_init, sigmoid_backward,
                               sigmoid_forward, silu_backward, silu_forward,
                               sinusoidal_embedding, upsample2_backward,
                               upsample2_forward)

from oracles import fd_gradient


def _rand(rng, *shape):
    return rng.normal(0, 1, shape)


def test_conv_shapes():
    rng = np.random.default_rng(0)
    x = _rand(rng, 2, 8, 10, 3)
    w = he_init(rng, 3, 3, 3, 5)
    b = np.zeros(5)
    y, _ = conv2d_forward(x, w, b)
    assert y.shape == (2, 8, 10, 5)
    y2, _ = conv2d_forward(x, w, b, stride=2)
    assert y2.shape == (2, 4, 5, 5)


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(1)
    x = _rand(rng, 1, 5, 5, 2)
    w = _rand(rng, 3, 3, 2, 1)
    b = np.array([0.3])
    y, _ = conv2d_forward(x, w, b)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    want = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            want[i, j] = (xp[0, i:i + 3, j:j + 3, :] * w[:, :, :, 0]).sum() + 0.3
    assert np.allclose(y[0, :, :, 0], want, atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradients(stride):
    rng = np.random.default_rng(2)
    x = _rand(rng, 1, 6, 6, 2)
    w = he_init(rng, 3, 3, 2, 3)
    b = _rand(rng, 3)
    gy = _rand(rng, *conv2d_forward(x, w, b, stride)[0].shape)

    def loss(arrs):
        out, _ = conv2d_forward(arrs[0], arrs[1], arrs[2], stride)
        return float((out * gy).sum())

    _, cache = conv2d_forward(x, w, b, stride)
    gx, gw, gb = conv2d_backward(gy, cache)
    for arr, got in ((x, gx), (w, gw), (b, gb)):
        others = [x, w, b]
        idx = [id(a) for a in others].index(id(arr))

        def f(a, idx=idx):
            trial = [x, w, b]
            trial[idx] = a
            return loss(trial)

        fd = fd_gradient(f, arr.copy())
        tol = 1e-6 + 1e-3 * np.maximum(np.abs(fd), np.abs(got))
        assert np.all(np.abs(fd - got) <= tol)


@pytest.mark.parametrize("fwd,bwd", [(silu_forward, silu_backward),
                                     (sigmoid_forward, sigmoid_backward)])
def test_activation_gradients(fwd, bwd):
    rng = np.random.default_rng(3)
    x = _rand(rng, 4, 5)
    gy = _rand(rng, 4, 5)
    y, cache = fwd(x)
    gx = bwd(gy, cache)
    fd = fd_gradient(lambda a: float((fwd(a)[0] * gy).sum()), x.copy())
    assert np.all(np.abs(fd - gx) <= 1e-6 + 1e-3 * np.abs(fd))


def test_sigmoid_range():
    y, _ = sigmoid_forward(np.array([-30.0, 0.0, 30.0]))
    assert np.all((y > 0) & (y < 1))
    assert y[1] == pytest.approx(0.5)


def test_upsample_doubles_and_adjoint():
    rng = np.random.default_rng(4)
    x = _rand(rng, 1, 3, 4, 2)
    y, _ = upsample2_forward(x)
    assert y.shape == (1, 6, 8, 2)
    assert np.array_equal(y[0, 0:2, 0:2, 0], np.full((2, 2), x[0, 0, 0, 0]))
    # adjoint identity <Ax, y> == <x, A^T y>
    gy = _rand(rng, 1, 6, 8, 2)
    gx = upsample2_backward(gy, x.shape)
    assert float((y * gy).sum()) == pytest.approx(float((x * gx).sum()), rel=1e-12)


def test_crop_and_adjoint():
    rng = np.random.default_rng(5)
    x = _rand(rng, 1, 7, 9, 2)
    y = crop_to(x, 6, 8)
    assert y.shape == (1, 6, 8, 2)
    assert np.array_equal(y, x[:, :6, :8, :])
    gy = _rand(rng, 1, 6, 8, 2)
    gx = crop_to_backward(gy, x.shape)
    assert float((y * gy).sum()) == pytest.approx(float((x * gx).sum()), rel=1e-12)


def test_sinusoidal_embedding():
    e = sinusoidal_embedding(0.0, 16)
    assert e.shape == (16,)
    assert np.allclose(e[:8], 0.0)   # sin(0)
    assert np.allclose(e[8:], 1.0)   # cos(0)
    assert not np.allclose(sinusoidal_embedding(3.0, 16),
                           sinusoidal_embedding(500.0, 16))
    with pytest.raises(ValueError):
        sinusoidal_embedding(1.0, 15)


def test_he_init_statistics():
    rng = np.random.default_rng(6)
    w = he_init(rng, 3, 3, 64, 64)
    want_std = np.sqrt(2.0 / (3 * 3 * 64))
    assert w.std() == pytest.approx(want_std, rel=0.05)
    assert abs(w.mean()) < 3.0 * want_std / np.sqrt(w.size)
