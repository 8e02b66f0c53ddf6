"""One-step latent painter with LiDAR-conditioned attention fusion.

The model encodes the artifact render and the LiDAR condition image into
C_z-channel latents (shared encoder, stride-8), predicts a combined
denoised latent from the stacked pair with a time-conditioned conv net,
fuses the two latents with single-channel attention weights, applies one
deterministic denoise step, and decodes back to an image through skip
connections from the artifact branch.

Everything is plain numpy with hand-written backwards; train_painter runs
SGD with momentum on the full pipeline. Checkpoints are `.lpm` files:
magic LPPM, version, a JSON config blob, then named float32 blocks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import nn_ops as ops
from .errors import FormatError, ScheduleError, TrainingError
from .losses import l2_with_grad, perceptual_with_grad, ssim_with_grad

PAINTER_MAGIC = b"LPPM"
PAINTER_VERSION = 1

# (perceptual, l2, ssim-complement) weights of the painter objective
PAINTER_LOSS_WEIGHTS = (0.2, 0.6, 0.4)


# ---------------------------------------------------------------------------
# Diffusion schedule


class DiffusionSchedule:
    """Cumulative-product schedule arrays for t in {1..T}.

    alpha is strictly decreasing in (0, 1]; beta = 1 - alpha; sigma >= 0.
    The t = 1 boundary uses alpha_0 := 1, beta_0 := beta_1.
    """

    def __init__(self, alpha, beta, sigma):
        self.alpha = np.asarray(alpha, dtype=np.float64)
        self.beta = np.asarray(beta, dtype=np.float64)
        self.sigma = np.asarray(sigma, dtype=np.float64)
        t = self.alpha.shape[0]
        if self.beta.shape != (t,) or self.sigma.shape != (t,):
            raise ValueError("schedule arrays must share one length")
        if t == 0:
            raise ScheduleError("empty schedule")
        if np.any(self.alpha <= 0) or np.any(self.alpha > 1):
            raise ScheduleError("alpha values must lie in (0, 1]")
        if np.any(np.diff(self.alpha) >= 0):
            raise ScheduleError("alpha must be strictly decreasing")
        if not np.allclose(self.beta, 1.0 - self.alpha, atol=1e-12):
            raise ScheduleError("beta must equal 1 - alpha")
        if np.any(self.sigma < 0):
            raise ScheduleError("sigma must be non-negative")

    @property
    def timesteps(self) -> int:
        return self.alpha.shape[0]

    @staticmethod
    def linear(timesteps: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 0.02, sigma: float = 0.0) -> "DiffusionSchedule":
        step_beta = np.linspace(beta_start, beta_end, timesteps)
        alpha = np.cumprod(1.0 - step_beta)
        return DiffusionSchedule(alpha, 1.0 - alpha,
                                 np.full(timesteps, float(sigma)))

    def _at(self, t: int):
        """(alpha_t, beta_t) with the documented t = 0 boundary values."""
        if t == 0:
            return 1.0, float(self.beta[0])
        return float(self.alpha[t - 1]), float(self.beta[t - 1])

    def coefficients(self, t: int):
        """Blend coefficients (c_prev, c_cur, sigma_t) for the step-t update."""
        if not 1 <= t <= self.timesteps:
            raise ValueError(f"timestep {t} outside 1..{self.timesteps}")
        alpha_prev, beta_prev = self._at(t - 1)
        alpha_cur, beta_cur = self._at(t)
        if beta_prev == 0.0 or beta_cur == 0.0:
            raise ScheduleError(f"zero beta at step {t}")
        c_prev = np.sqrt(alpha_prev) * beta_cur / beta_prev
        c_cur = np.sqrt(alpha_cur) * beta_prev / beta_cur
        return c_prev, c_cur, float(self.sigma[t - 1])


def denoise_step(z_clean, z_fused, t: int, schedule: DiffusionSchedule, noise=None):
    """Single deterministic denoise: c_prev * Zcom + c_cur * zcom + sigma * eps."""
    z_clean = np.asarray(z_clean, dtype=np.float64)
    z_fused = np.asarray(z_fused, dtype=np.float64)
    if z_clean.shape != z_fused.shape:
        raise ValueError(f"latent shapes differ: {z_clean.shape} vs {z_fused.shape}")
    c_prev, c_cur, sigma = schedule.coefficients(t)
    out = c_prev * z_clean + c_cur * z_fused
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != z_clean.shape:
            raise ValueError("noise shape mismatch")
        out = out + sigma * noise
    return out


def fuse_latents(z_art, z_lidar, weights):
    """Convex per-pixel blend w * zA + (1 - w) * zL, w broadcast over channels."""
    z_art = np.asarray(z_art, dtype=np.float64)
    z_lidar = np.asarray(z_lidar, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if z_art.shape != z_lidar.shape:
        raise ValueError(f"latent shapes differ: {z_art.shape} vs {z_lidar.shape}")
    if weights.shape[-3:-1] != z_art.shape[-3:-1]:
        raise ValueError("weight grid does not match latent grid")
    return weights * z_art + (1.0 - weights) * z_lidar


# ---------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class PainterConfig:
    latent_channels: int = 8
    enc_channels: tuple = (32, 64)
    hidden: int = 64
    att_width: int = 32
    time_dim: int = 32
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    t_star: int = 1000
    sigma: float = 0.0


class PainterModel:
    """Parameter store plus the schedule and inference timestep."""

    def __init__(self, config: PainterConfig, params: dict,
                 schedule: DiffusionSchedule):
        self.config = config
        self.params = params
        self.schedule = schedule
        if not 1 <= config.t_star <= schedule.timesteps:
            raise ValueError(f"t_star {config.t_star} outside schedule")

    @staticmethod
    def build(config: PainterConfig = None, seed: int = 0) -> "PainterModel":
        config = config or PainterConfig()
        rng = np.random.default_rng(seed)
        cz = config.latent_channels
        e1, e2 = config.enc_channels
        hid, aw, td = config.hidden, config.att_width, config.time_dim
        schedule = DiffusionSchedule.linear(config.timesteps, config.beta_start,
                                            config.beta_end, config.sigma)
        p = {}

        def conv(name, kh, kw, ci, co, scale=1.0):
            p[f"{name}.w"] = ops.he_init(rng, kh, kw, ci, co) * scale
            p[f"{name}.b"] = np.zeros(co)

        conv("enc1", 3, 3, 3, e1)
        conv("enc2", 3, 3, e1, e2)
        conv("enc3", 3, 3, e2, cz)
        conv("np1", 3, 3, 2 * cz, hid)
        p["np_time.w"] = rng.normal(0.0, 1.0 / np.sqrt(td), (td, hid))
        p["np_time.b"] = np.zeros(hid)
        conv("np2", 3, 3, hid, hid)
        conv("np3", 3, 3, hid, hid)
        conv("np4", 3, 3, hid, cz)
        conv("att1", 3, 3, 2 * cz, aw)
        conv("att2", 3, 3, aw, aw)
        conv("att3", 3, 3, aw, 1)
        # the denoise step at t* contracts the latent by roughly c_prev + c_cur;
        # widen the first decoder conv so decode starts at unit variance
        c_prev, c_cur, _ = schedule.coefficients(config.t_star)
        conv("dec3", 3, 3, cz, e2, scale=1.0 / (c_prev + c_cur))
        conv("skip2", 1, 1, e2, e2)
        conv("dec2", 3, 3, e2, e1)
        conv("skip1", 1, 1, e1, e1)
        conv("dec1", 3, 3, e1, e1)
        conv("out", 3, 3, e1, 3)
        return PainterModel(config, p, schedule)

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self) -> "PainterModel":
        return PainterModel(self.config, {k: v.copy() for k, v in self.params.items()},
                            self.schedule)


def _as_batch(x, channels, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[-1] != channels:
        raise ValueError(f"{what}: expected (..., H, W, {channels}), got {x.shape}")
    return x, single


# -- encoder --


def _encode_batch(model, images):
    p = model.params
    h1, c1 = ops.conv2d_forward(images, p["enc1.w"], p["enc1.b"], stride=2)
    a1, ca1 = ops.silu_forward(h1)
    h2, c2 = ops.conv2d_forward(a1, p["enc2.w"], p["enc2.b"], stride=2)
    a2, ca2 = ops.silu_forward(h2)
    z, c3 = ops.conv2d_forward(a2, p["enc3.w"], p["enc3.b"], stride=2)
    return z, (a1, a2), (c1, ca1, c2, ca2, c3)


def _encode_backward(grad_z, grad_skips, cache, grads, p):
    c1, ca1, c2, ca2, c3 = cache
    gx3, gw, gb = ops.conv2d_backward(grad_z, c3)
    grads["enc3.w"] += gw
    grads["enc3.b"] += gb
    ga2 = gx3 if grad_skips is None else gx3 + grad_skips[1]
    gh2 = ops.silu_backward(ga2, ca2)
    gx2, gw, gb = ops.conv2d_backward(gh2, c2)
    grads["enc2.w"] += gw
    grads["enc2.b"] += gb
    ga1 = gx2 if grad_skips is None else gx2 + grad_skips[0]
    gh1 = ops.silu_backward(ga1, ca1)
    gx1, gw, gb = ops.conv2d_backward(gh1, c1)
    grads["enc1.w"] += gw
    grads["enc1.b"] += gb
    return gx1


def encode(model: PainterModel, image):
    """Image -> (latent, skip activations). Spatial dims must be multiples of 8."""
    x, single = _as_batch(image, 3, "encode")
    if x.shape[1] % 8 or x.shape[2] % 8:
        raise ValueError(f"encode: H, W must be multiples of 8, got {x.shape[1:3]}")
    z, skips, _ = _encode_batch(model, x)
    if single:
        return z[0], (skips[0][0], skips[1][0])
    return z, skips


# -- noise predictor --


def _predict_batch(model, z_art, z_lidar, t):
    p = model.params
    x = np.concatenate([z_art, z_lidar], axis=-1)
    h1, c1 = ops.conv2d_forward(x, p["np1.w"], p["np1.b"])
    a1, ca1 = ops.silu_forward(h1)
    emb = ops.sinusoidal_embedding(t, model.config.time_dim)
    temb = emb @ p["np_time.w"] + p["np_time.b"]
    a1t = a1 + temb
    h2, c2 = ops.conv2d_forward(a1t, p["np2.w"], p["np2.b"])
    a2, ca2 = ops.silu_forward(h2)
    h3, c3 = ops.conv2d_forward(a2, p["np3.w"], p["np3.b"])
    a3, ca3 = ops.silu_forward(h3)
    out, c4 = ops.conv2d_forward(a3, p["np4.w"], p["np4.b"])
    return out, (c1, ca1, emb, c2, ca2, c3, ca3, c4)


def _predict_backward(grad_out, cache, grads, cz):
    c1, ca1, emb, c2, ca2, c3, ca3, c4 = cache
    g, gw, gb = ops.conv2d_backward(grad_out, c4)
    grads["np4.w"] += gw
    grads["np4.b"] += gb
    g = ops.silu_backward(g, ca3)
    g, gw, gb = ops.conv2d_backward(g, c3)
    grads["np3.w"] += gw
    grads["np3.b"] += gb
    g = ops.silu_backward(g, ca2)
    g, gw, gb = ops.conv2d_backward(g, c2)
    grads["np2.w"] += gw
    grads["np2.b"] += gb
    gtemb = g.sum(axis=(0, 1, 2))
    grads["np_time.w"] += np.outer(emb, gtemb)
    grads["np_time.b"] += gtemb
    g = ops.silu_backward(g, ca1)
    g, gw, gb = ops.conv2d_backward(g, c1)
    grads["np1.w"] += gw
    grads["np1.b"] += gb
    return g[..., :cz], g[..., cz:]


def predict_noise(model: PainterModel, z_art, z_lidar, t: int):
    """Combined clean-latent estimate from the stacked latents at step t."""
    cz = model.config.latent_channels
    za, single = _as_batch(z_art, cz, "predict_noise")
    zl, _ = _as_batch(z_lidar, cz, "predict_noise")
    if za.shape != zl.shape:
        raise ValueError(f"latent shapes differ: {za.shape} vs {zl.shape}")
    out, _ = _predict_batch(model, za, zl, t)
    return out[0] if single else out


# -- attention --


def _attention_batch(model, z_art, z_lidar):
    p = model.params
    x = np.concatenate([z_art, z_lidar], axis=-1)
    h1, c1 = ops.conv2d_forward(x, p["att1.w"], p["att1.b"])
    a1, ca1 = ops.silu_forward(h1)
    h2, c2 = ops.conv2d_forward(a1, p["att2.w"], p["att2.b"])
    a2, ca2 = ops.silu_forward(h2)
    h3, c3 = ops.conv2d_forward(a2, p["att3.w"], p["att3.b"])
    w, cs = ops.sigmoid_forward(h3)
    return w, (c1, ca1, c2, ca2, c3, cs)


def _attention_backward(grad_w, cache, grads, cz):
    c1, ca1, c2, ca2, c3, cs = cache
    g = ops.sigmoid_backward(grad_w, cs)
    g, gw, gb = ops.conv2d_backward(g, c3)
    grads["att3.w"] += gw
    grads["att3.b"] += gb
    g = ops.silu_backward(g, ca2)
    g, gw, gb = ops.conv2d_backward(g, c2)
    grads["att2.w"] += gw
    grads["att2.b"] += gb
    g = ops.silu_backward(g, ca1)
    g, gw, gb = ops.conv2d_backward(g, c1)
    grads["att1.w"] += gw
    grads["att1.b"] += gb
    return g[..., :cz], g[..., cz:]


def attention_weights(model: PainterModel, z_art, z_lidar):
    """Single-channel fusion weights in [0, 1] from the stacked latents."""
    cz = model.config.latent_channels
    za, single = _as_batch(z_art, cz, "attention_weights")
    zl, _ = _as_batch(z_lidar, cz, "attention_weights")
    if za.shape != zl.shape:
        raise ValueError(f"latent shapes differ: {za.shape} vs {zl.shape}")
    w, _ = _attention_batch(model, za, zl)
    return w[0] if single else w


# -- decoder --


def _decode_batch(model, z, skips, out_hw):
    p = model.params
    a1, a2 = skips
    u3, cu3 = ops.upsample2_forward(z)
    u3c = ops.crop_to(u3, a2.shape[1], a2.shape[2])
    h3, c3 = ops.conv2d_forward(u3c, p["dec3.w"], p["dec3.b"])
    d3, cd3 = ops.silu_forward(h3)
    m2, cm2 = ops.conv2d_forward(a2, p["skip2.w"], p["skip2.b"])
    d3 = d3 + m2
    u2, cu2 = ops.upsample2_forward(d3)
    u2c = ops.crop_to(u2, a1.shape[1], a1.shape[2])
    h2, c2 = ops.conv2d_forward(u2c, p["dec2.w"], p["dec2.b"])
    d2, cd2 = ops.silu_forward(h2)
    m1, cm1 = ops.conv2d_forward(a1, p["skip1.w"], p["skip1.b"])
    d2 = d2 + m1
    u1, cu1 = ops.upsample2_forward(d2)
    u1c = ops.crop_to(u1, out_hw[0], out_hw[1])
    h1, c1 = ops.conv2d_forward(u1c, p["dec1.w"], p["dec1.b"])
    d1, cd1 = ops.silu_forward(h1)
    ho, co = ops.conv2d_forward(d1, p["out.w"], p["out.b"])
    img, cso = ops.sigmoid_forward(ho)
    cache = (cu3, u3.shape, c3, cd3, cm2, cu2, u2.shape, c2, cd2, cm1,
             cu1, u1.shape, c1, cd1, co, cso)
    return img, cache


def _decode_backward(grad_img, cache, grads):
    (cu3, u3s, c3, cd3, cm2, cu2, u2s, c2, cd2, cm1,
     cu1, u1s, c1, cd1, co, cso) = cache
    g = ops.sigmoid_backward(grad_img, cso)
    g, gw, gb = ops.conv2d_backward(g, co)
    grads["out.w"] += gw
    grads["out.b"] += gb
    g = ops.silu_backward(g, cd1)
    g, gw, gb = ops.conv2d_backward(g, c1)
    grads["dec1.w"] += gw
    grads["dec1.b"] += gb
    g = ops.crop_to_backward(g, u1s)
    gd2 = ops.upsample2_backward(g, cu1)
    ga1_mix, gw, gb = ops.conv2d_backward(gd2, cm1)
    grads["skip1.w"] += gw
    grads["skip1.b"] += gb
    g = ops.silu_backward(gd2, cd2)
    g, gw, gb = ops.conv2d_backward(g, c2)
    grads["dec2.w"] += gw
    grads["dec2.b"] += gb
    g = ops.crop_to_backward(g, u2s)
    gd3 = ops.upsample2_backward(g, cu2)
    ga2_mix, gw, gb = ops.conv2d_backward(gd3, cm2)
    grads["skip2.w"] += gw
    grads["skip2.b"] += gb
    g = ops.silu_backward(gd3, cd3)
    g, gw, gb = ops.conv2d_backward(g, c3)
    grads["dec3.w"] += gw
    grads["dec3.b"] += gb
    g = ops.crop_to_backward(g, u3s)
    gz = ops.upsample2_backward(g, cu3)
    return gz, (ga1_mix, ga2_mix)


def decode(model: PainterModel, z, skips):
    """Latent + skip activations -> image in [0, 1]."""
    cz = model.config.latent_channels
    zb, single = _as_batch(z, cz, "decode")
    a1, a2 = skips
    if single:
        a1, a2 = a1[None], a2[None]
    if a2.shape[1] < zb.shape[1] or a1.shape[1] < a2.shape[1]:
        raise ValueError("skip activations inconsistent with latent size")
    out_hw = (a1.shape[1] * 2, a1.shape[2] * 2)
    img, _ = _decode_batch(model, zb, (a1, a2), out_hw)
    return img[0] if single else img


# -- full pipeline --


def _paint_batch(model, artifact, lidar, force_weights=None):
    t_star = model.config.t_star
    z_art, skips_a, ce_a = _encode_batch(model, artifact)
    z_lid, _, ce_l = _encode_batch(model, lidar)
    z_clean, cn = _predict_batch(model, z_art, z_lid, t_star)
    w, ca = _attention_batch(model, z_art, z_lid)
    w_used = w if force_weights is None else np.broadcast_to(
        np.asarray(force_weights, dtype=np.float64), w.shape)
    z_com = w_used * z_art + (1.0 - w_used) * z_lid
    c_prev, c_cur, _ = model.schedule.coefficients(t_star)
    z_den = c_prev * z_clean + c_cur * z_com
    out_hw = (artifact.shape[1], artifact.shape[2])
    img, cd = _decode_batch(model, z_den, skips_a, out_hw)
    tape = {
        "ce_a": ce_a, "ce_l": ce_l, "cn": cn, "ca": ca, "cd": cd,
        "z_art": z_art, "z_lid": z_lid, "w": w, "w_used": w_used,
        "forced": force_weights is not None, "coef": (c_prev, c_cur),
        "inter": {"z_art": z_art, "z_lidar": z_lid, "z_clean": z_clean,
                  "weights": w, "w_used": w_used, "z_fused": z_com,
                  "z_denoised": z_den},
    }
    return img, tape


def _paint_backward(model, tape, grad_img):
    grads = model.zero_grads()
    cz = model.config.latent_channels
    c_prev, c_cur = tape["coef"]
    g_zden, (g_a1, g_a2) = _decode_backward(grad_img, tape["cd"], grads)
    g_zclean = c_prev * g_zden
    g_zcom = c_cur * g_zden
    w_used = tape["w_used"]
    z_art, z_lid = tape["z_art"], tape["z_lid"]
    g_za = g_zcom * w_used
    g_zl = g_zcom * (1.0 - w_used)
    if not tape["forced"]:
        g_w = np.sum(g_zcom * (z_art - z_lid), axis=-1, keepdims=True)
        ga, gl = _attention_backward(g_w, tape["ca"], grads, cz)
        g_za = g_za + ga
        g_zl = g_zl + gl
    ga, gl = _predict_backward(g_zclean, tape["cn"], grads, cz)
    g_za = g_za + ga
    g_zl = g_zl + gl
    _encode_backward(g_za, (g_a1, g_a2), tape["ce_a"], grads, model.params)
    _encode_backward(g_zl, None, tape["ce_l"], grads, model.params)
    return grads


def _check_paint_inputs(artifact, lidar):
    a, single = _as_batch(artifact, 3, "paint artifact")
    l, _ = _as_batch(lidar, 3, "paint lidar")
    if a.shape != l.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {l.shape}")
    if a.shape[1] % 8 or a.shape[2] % 8:
        raise ValueError(f"paint: H, W must be multiples of 8, got {a.shape[1:3]}")
    return a, l, single


def paint(model: PainterModel, artifact, lidar):
    """Repair an artifact render conditioned on its LiDAR image."""
    a, l, single = _check_paint_inputs(artifact, lidar)
    img, _ = _paint_batch(model, a, l)
    return img[0] if single else img


def paint_with_intermediates(model: PainterModel, artifact, lidar,
                             force_weights=None) -> dict:
    """paint plus every intermediate tensor; force_weights overrides fusion."""
    a, l, single = _check_paint_inputs(artifact, lidar)
    img, tape = _paint_batch(model, a, l, force_weights=force_weights)
    out = {"image": img}
    out.update(tape["inter"])
    if single:
        out = {k: v[0] for k, v in out.items()}
    return out


# ---------------------------------------------------------------------------
# Training


def painter_loss(pred, target, weights=PAINTER_LOSS_WEIGHTS):
    """Perceptual / L2 / SSIM-complement blend; returns (value, grad)."""
    w_perc, w_l2, w_ssim = weights
    v2, g2 = l2_with_grad(pred, target)
    vs, gs = ssim_with_grad(pred, target)
    vp, gp = perceptual_with_grad(pred, target)
    value = w_perc * vp + w_l2 * v2 + w_ssim * (1.0 - vs)
    grad = w_perc * gp + w_l2 * g2 - w_ssim * gs
    return value, grad


def train_painter(model: PainterModel, dataset, steps: int,
                  learning_rate: float = 1e-3, momentum: float = 0.9,
                  batch_size: int = 4, seed: int = 0,
                  loss_weights=PAINTER_LOSS_WEIGHTS):
    """SGD with momentum over (artifact, lidar, target) triples.

    Returns the per-step loss trace; the model is updated in place.
    """
    if not dataset:
        raise ValueError("train_painter requires a non-empty dataset")
    rng = np.random.default_rng(seed)
    velocity = model.zero_grads()
    trace = []
    n = len(dataset)
    for step in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        art = np.stack([np.asarray(dataset[i][0], dtype=np.float64) for i in idx])
        lid = np.stack([np.asarray(dataset[i][1], dtype=np.float64) for i in idx])
        tgt = np.stack([np.asarray(dataset[i][2], dtype=np.float64) for i in idx])
        pred, tape = _paint_batch(model, art, lid)
        batch_loss = 0.0
        grad_img = np.zeros_like(pred)
        for b in range(batch_size):
            v, g = painter_loss(pred[b], tgt[b], loss_weights)
            batch_loss += v / batch_size
            grad_img[b] = g / batch_size
        if not np.isfinite(batch_loss):
            raise TrainingError(step, f"non-finite loss {batch_loss}")
        trace.append(float(batch_loss))
        grads = _paint_backward(model, tape, grad_img)
        for name, g in grads.items():
            velocity[name] = momentum * velocity[name] - learning_rate * g
            model.params[name] += velocity[name]
    return trace


def pretrain_noise_predictor(model: PainterModel, dataset, steps: int,
                             learning_rate: float = 1e-3, momentum: float = 0.9,
                             batch_size: int = 4, seed: int = 0):
    """Optional denoising pretraining of the predictor alone.

    Draws a timestep and Gaussian noise per sample, corrupts the target
    latent along the schedule, and regresses the injected noise (L2).
    Only np* parameters are updated.
    """
    if not dataset:
        raise ValueError("pretrain requires a non-empty dataset")
    rng = np.random.default_rng(seed)
    np_names = [k for k in model.params if k.startswith("np")]
    velocity = {k: np.zeros_like(model.params[k]) for k in np_names}
    trace = []
    n = len(dataset)
    for step in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        lid = np.stack([np.asarray(dataset[i][1], dtype=np.float64) for i in idx])
        tgt = np.stack([np.asarray(dataset[i][2], dtype=np.float64) for i in idx])
        z0, _, _ = _encode_batch(model, tgt)
        z_lid, _, _ = _encode_batch(model, lid)
        t = int(rng.integers(1, model.schedule.timesteps + 1))
        eps = rng.standard_normal(z0.shape)
        alpha_t, beta_t = model.schedule._at(t)
        z_t = np.sqrt(alpha_t) * z0 + np.sqrt(beta_t) * eps
        pred, cache = _predict_batch(model, z_t, z_lid, t)
        diff = pred - eps
        loss = float(np.mean(diff * diff))
        if not np.isfinite(loss):
            raise TrainingError(step, f"non-finite loss {loss}")
        trace.append(loss)
        grads = model.zero_grads()
        _predict_backward(2.0 * diff / diff.size, cache, grads,
                          model.config.latent_channels)
        for name in np_names:
            velocity[name] = momentum * velocity[name] - learning_rate * grads[name]
            model.params[name] += velocity[name]
    return trace


# ---------------------------------------------------------------------------
# Checkpoint format


def save_painter(path, model: PainterModel) -> None:
    """Write an .lpm checkpoint: LPPM magic, version, config JSON, f32 blocks."""
    cfg = asdict(model.config)
    cfg["enc_channels"] = list(model.config.enc_channels)
    blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(PAINTER_MAGIC)
        f.write(struct.pack("<I", PAINTER_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in sorted(model.params):
            arr = np.ascontiguousarray(model.params[name], dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_painter(path) -> PainterModel:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != PAINTER_MAGIC:
        raise FormatError(path, "bad magic, expected LPPM")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != PAINTER_VERSION:
        raise FormatError(path, f"unsupported version {version}")
    (json_len,) = struct.unpack_from("<I", blob, 8)
    off = 12
    if len(blob) < off + json_len:
        raise FormatError(path, "truncated config blob")
    try:
        cfg = json.loads(blob[off:off + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(path, f"bad config blob: {exc}")
    off += json_len
    cfg["enc_channels"] = tuple(cfg["enc_channels"])
    config = PainterConfig(**cfg)
    params = {}
    while off < len(blob):
        if len(blob) < off + 2:
            raise FormatError(path, "truncated block header")
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        need = count * 4
        if len(blob) < off + need:
            raise FormatError(path, f"truncated data for block {name}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        params[name] = arr.reshape(shape).astype(np.float64)
        off += need
    if not params:
        raise FormatError(path, "no parameter blocks")
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise FormatError(path, f"non-finite values in block {name}")
    schedule = DiffusionSchedule.linear(config.timesteps, config.beta_start,
                                        config.beta_end, config.sigma)
    return PainterModel(config, params, schedule)
