"""Dynamic 3D Gaussian scene: parameters, composition, differentiable render.

Primitives are {mu, s, r, alpha, c} with covariance R(r) diag(s)^2 R(r)^T.
The scene holds a world-frame background set plus per-actor box-local sets;
actors are placed per frame by their annotated pose (world mean R mu + t,
world rotation R_v r^mat). Rendering projects to 2D (EWA-style Jacobian,
0.3 I low-pass), depth-sorts globally, bins gaussians into 16x16 tiles and
alpha-blends front to back through the selected kernel backend.

Training-facing parameters are stored pre-activation: log scales, logit
opacities, unnormalized quaternions (normalized on use). Means and colors
are stored plainly; the optimizer clamps colors to [0, 1] after each step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import backends
from .errors import FormatError, ValidationError
from .geometry import Pose, quat_left_matrix, quat_multiply, quat_to_matrix

TILE_SIZE = 16
NEAR_PLANE = 0.1
COV2D_REG = 0.3
SCENE_MAGIC = b"LPGS"
SCENE_VERSION = 1
QUAT_SAVE_TOL = 1e-6  # renormalize on save only past this norm deviation


# ---------------------------------------------------------------------------
# Primitive-level API


@dataclass(frozen=True)
class GaussianPrimitive:
    """One validated gaussian in activated (physical) parameters."""

    mu: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(3)
        s = np.asarray(self.scale, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        c = np.asarray(self.color, dtype=np.float64).reshape(3)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "color", c)
        if not np.all(np.isfinite(mu)):
            raise ValidationError("gaussian.mu", "non-finite")
        if not np.all(s > 0):
            raise ValidationError("gaussian.scale", f"{s.tolist()} must be > 0")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValidationError("gaussian.rotation", "quaternion not unit")
        if not (0.0 < self.opacity < 1.0):
            raise ValidationError("gaussian.opacity", f"{self.opacity} outside (0, 1)")
        if c.min() < 0 or c.max() > 1:
            raise ValidationError("gaussian.color", f"{c.tolist()} outside [0, 1]")

    def covariance(self) -> np.ndarray:
        return covariance(self.scale, self.rotation)


def covariance(s, r) -> np.ndarray:
    """Sigma = R diag(s) diag(s) R^T for unit quaternion(s) r; broadcasts."""
    s = np.asarray(s, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    norm = np.linalg.norm(r, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-9):
        raise ValueError("covariance expects unit quaternions; normalize first")
    rot = quat_to_matrix(r)
    a = rot * s[..., None, :]
    return a @ np.swapaxes(a, -1, -2)


def compose_actor(primitives, pose: Pose):
    """Box-local primitives -> world primitives at the given pose."""
    qv = pose.quaternion()
    out = []
    for p in primitives:
        out.append(GaussianPrimitive(
            mu=pose.rotation @ p.mu + pose.translation,
            scale=p.scale,
            rotation=quat_multiply(qv, p.rotation),
            opacity=p.opacity,
            color=p.color,
        ))
    return out


# ---------------------------------------------------------------------------
# Array-of-struct storage


class GaussianGroup:
    """Raw (pre-activation) parameter arrays for one gaussian set."""

    FIELDS = ("means", "log_scales", "quats", "logit_opacities", "colors")

    def __init__(self, means, log_scales, quats, logit_opacities, colors):
        self.means = np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 3)
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float64).reshape(-1, 3)
        self.quats = np.ascontiguousarray(quats, dtype=np.float64).reshape(-1, 4)
        self.logit_opacities = np.ascontiguousarray(
            logit_opacities, dtype=np.float64).reshape(-1)
        self.colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        for name in self.FIELDS:
            if getattr(self, name).shape[0] != n:
                raise ValidationError(f"group.{name}", "length mismatch")

    def __len__(self):
        return self.means.shape[0]

    @staticmethod
    def empty() -> "GaussianGroup":
        return GaussianGroup(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)),
                             np.zeros(0), np.zeros((0, 3)))

    @staticmethod
    def from_activated(mu, scale, quat, opacity, color) -> "GaussianGroup":
        scale = np.asarray(scale, dtype=np.float64)
        opacity = np.asarray(opacity, dtype=np.float64)
        if np.any(scale <= 0):
            raise ValidationError("group.scale", "must be > 0")
        if np.any(opacity <= 0) or np.any(opacity >= 1):
            raise ValidationError("group.opacity", "must be in (0, 1)")
        return GaussianGroup(np.asarray(mu, dtype=np.float64), np.log(scale),
                             np.asarray(quat, dtype=np.float64), logit(opacity),
                             np.asarray(color, dtype=np.float64))

    def activated(self):
        """Physical parameters: (mu, s, qhat, qnorm, opacity, color)."""
        s = np.exp(self.log_scales)
        qn = np.linalg.norm(self.quats, axis=1)
        qhat = self.quats / qn[:, None]
        o = expit(self.logit_opacities)
        return self.means, s, qhat, qn, o, self.colors

    def primitives(self):
        mu, s, qhat, _, o, c = self.activated()
        return [GaussianPrimitive(mu[i], s[i], qhat[i], float(o[i]),
                                  np.clip(c[i], 0.0, 1.0)) for i in range(len(self))]

    def copy(self) -> "GaussianGroup":
        return GaussianGroup(*(getattr(self, f).copy() for f in self.FIELDS))

    def zero_grads(self) -> dict:
        return {f: np.zeros_like(getattr(self, f)) for f in self.FIELDS}


@dataclass
class GaussianScene:
    """Background group plus per-actor groups and their per-frame poses."""

    background: GaussianGroup
    actors: list = field(default_factory=list)
    actor_poses: list = field(default_factory=list)  # per actor: {frame: Pose}

    def __post_init__(self):
        if len(self.actor_poses) < len(self.actors):
            self.actor_poses = self.actor_poses + [
                {} for _ in range(len(self.actors) - len(self.actor_poses))]

    def groups(self):
        yield "background", self.background
        for i, g in enumerate(self.actors):
            yield f"actor_{i}", g

    def total_count(self) -> int:
        return sum(len(g) for _, g in self.groups())

    def copy(self) -> "GaussianScene":
        return GaussianScene(self.background.copy(), [g.copy() for g in self.actors],
                             [dict(p) for p in self.actor_poses])

    def zero_grads(self) -> dict:
        return {name: g.zero_grads() for name, g in self.groups()}

    def set_poses_from_bundle(self, bundle) -> None:
        self.actor_poses = [dict() for _ in self.actors]
        for box in bundle.boxes:
            if box.actor_id < len(self.actors):
                self.actor_poses[box.actor_id][box.frame_index] = box.pose


# ---------------------------------------------------------------------------
# Rendering


@dataclass(frozen=True)
class RenderSettings:
    tile_size: int = TILE_SIZE
    sigma_factor: float = 3.0
    alpha_min: float = 1.0 / 255.0
    stop_t: float = 1e-4
    near: float = NEAR_PLANE
    background: tuple = (0.0, 0.0, 0.0)

    @staticmethod
    def exact() -> "RenderSettings":
        """Oracle-comparison mode: wide footprint, thresholds disabled."""
        return RenderSettings(sigma_factor=6.0, alpha_min=0.0, stop_t=0.0)


@dataclass
class RenderCache:
    """Forward intermediates retained for the analytic backward pass."""

    settings: RenderSettings
    camera: object
    scene: GaussianScene
    segments: list      # (name, group, start, stop, pose or None)
    sel: np.ndarray     # depth-sorted indices into the stacked world arrays
    world: dict         # stacked world-frame activated parameters
    proj: dict          # projection intermediates for the selected subset
    ranges: np.ndarray
    point_list: np.ndarray
    final_t: np.ndarray
    n_contrib: np.ndarray
    image: np.ndarray


def _stack_world(scene: GaussianScene, frame_index: int):
    """Compose all groups visible at the frame into stacked world arrays."""
    segments = []
    mus, scales, qhats, qnorms, opacities, colors = [], [], [], [], [], []
    start = 0
    for idx, (name, group) in enumerate(scene.groups()):
        if len(group) == 0:
            continue
        pose = None
        if name != "background":
            actor = idx - 1
            pose = scene.actor_poses[actor].get(frame_index)
            if pose is None:
                continue  # actor absent from this frame
        mu, s, qhat, qn, o, c = group.activated()
        if pose is not None:
            mu = mu @ pose.rotation.T + pose.translation
            qhat_w = quat_multiply(pose.quaternion(), qhat)
        else:
            qhat_w = qhat
        stop = start + len(group)
        segments.append((name, group, start, stop, pose))
        mus.append(mu)
        scales.append(s)
        qhats.append(qhat_w)
        qnorms.append(qn)
        opacities.append(o)
        colors.append(c)
        start = stop
    if not mus:
        return segments, {
            "mu": np.zeros((0, 3)), "s": np.zeros((0, 3)), "qhat": np.zeros((0, 4)),
            "qnorm": np.zeros(0), "o": np.zeros(0), "c": np.zeros((0, 3))}
    world = {
        "mu": np.concatenate(mus), "s": np.concatenate(scales),
        "qhat": np.concatenate(qhats), "qnorm": np.concatenate(qnorms),
        "o": np.concatenate(opacities), "c": np.concatenate(colors)}
    return segments, world


def _project(world, camera, near):
    """EWA projection of the stacked world gaussians.

    Returns per-gaussian mean2d, conic, depth, radius plus the chain
    intermediates, and the visibility mask.
    """
    w_rot = camera.pose.rotation.T  # world-to-camera
    cam = (world["mu"] - camera.pose.translation) @ w_rot.T
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    valid = z > near

    rot3 = quat_to_matrix(world["qhat"])
    a3 = rot3 * world["s"][:, None, :]
    sigma = a3 @ np.swapaxes(a3, 1, 2)
    v3 = np.einsum("ab,nbc,dc->nad", w_rot, sigma, w_rot)

    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = np.where(valid, 1.0 / z, 0.0)
    jac = np.zeros((cam.shape[0], 2, 3))
    jac[:, 0, 0] = camera.fx * inv_z
    jac[:, 0, 2] = -camera.fx * x * inv_z * inv_z
    jac[:, 1, 1] = camera.fy * inv_z
    jac[:, 1, 2] = -camera.fy * y * inv_z * inv_z
    cov2d = np.einsum("nab,nbc,ndc->nad", jac, v3, jac)
    cov2d[:, 0, 0] += COV2D_REG
    cov2d[:, 1, 1] += COV2D_REG

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    valid = valid & (det > 0)
    safe_det = np.where(valid, det, 1.0)
    conic = np.stack([cov2d[:, 1, 1] / safe_det, -cov2d[:, 0, 1] / safe_det,
                      cov2d[:, 0, 0] / safe_det], axis=1)

    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    mean2d = np.stack([camera.fx * x * inv_z + camera.cx,
                       camera.fy * y * inv_z + camera.cy], axis=1)
    return {
        "cam": cam, "rot3": rot3, "a3": a3, "v3": v3, "jac": jac,
        "cov2d": cov2d, "conic": conic, "mean2d": mean2d,
        "depth": z, "lam_max": lam_max, "w_rot": w_rot,
    }, valid


def project(scene: GaussianScene, frame_index: int, camera, near: float = NEAR_PLANE):
    """Public projection: (mean2d, cov2d, depth, valid) over all composed gaussians."""
    _, world = _stack_world(scene, frame_index)
    proj, valid = _project(world, camera, near)
    return proj["mean2d"], proj["cov2d"], proj["depth"], valid


def _bin_tiles(mean2d, radius, height, width, tile_size):
    """Duplicate depth-ordered gaussians into overlapped tiles.

    Returns (ranges (n_tiles, 2), point_list) where point_list holds indices
    into the depth-ordered arrays, grouped by tile, depth order preserved.
    """
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size
    n_tiles = tiles_x * tiles_y
    x0 = np.clip(np.floor((mean2d[:, 0] - radius) / tile_size), 0, tiles_x).astype(np.int64)
    x1 = np.clip(np.floor((mean2d[:, 0] + radius) / tile_size) + 1, 0, tiles_x).astype(np.int64)
    y0 = np.clip(np.floor((mean2d[:, 1] - radius) / tile_size), 0, tiles_y).astype(np.int64)
    y1 = np.clip(np.floor((mean2d[:, 1] + radius) / tile_size) + 1, 0, tiles_y).astype(np.int64)
    spans_x = np.maximum(x1 - x0, 0)
    spans_y = np.maximum(y1 - y0, 0)
    counts = spans_x * spans_y
    total = int(counts.sum())
    if total == 0:
        return np.zeros((n_tiles, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rep = np.repeat(np.arange(mean2d.shape[0], dtype=np.int64), counts)
    k = np.arange(total, dtype=np.int64) - offsets[rep]
    dx = k % spans_x[rep]
    dy = k // spans_x[rep]
    tid = (y0[rep] + dy) * tiles_x + (x0[rep] + dx)
    order = np.lexsort((rep, tid))
    tid_sorted = tid[order]
    point_list = rep[order]
    starts = np.searchsorted(tid_sorted, np.arange(n_tiles), side="left")
    ends = np.searchsorted(tid_sorted, np.arange(n_tiles), side="right")
    return np.stack([starts, ends], axis=1).astype(np.int64), point_list


def render(scene: GaussianScene, frame_index: int, camera,
           settings: RenderSettings = None, with_cache: bool = False):
    """Render the composed scene; returns (image, accumulated opacity[, cache])."""
    settings = settings or RenderSettings()
    segments, world = _stack_world(scene, frame_index)
    proj, valid = _project(world, camera, settings.near)

    radius_all = np.ceil(settings.sigma_factor * np.sqrt(np.maximum(proj["lam_max"], 0.0)))
    radius_all = np.maximum(radius_all, 1.0)
    sel = np.nonzero(valid)[0]
    order = np.argsort(proj["depth"][sel], kind="stable")
    sel = sel[order]

    mean2d = proj["mean2d"][sel]
    conic = proj["conic"][sel]
    radius = radius_all[sel]
    opac = world["o"][sel]
    colors = np.clip(world["c"][sel], 0.0, 1.0)
    bg = np.asarray(settings.background, dtype=np.float64)

    ranges, point_list = _bin_tiles(mean2d, radius, camera.height, camera.width,
                                    settings.tile_size)
    image, final_t, n_contrib = backends.blend_forward(
        mean2d, conic, opac, colors, bg, ranges, point_list,
        camera.height, camera.width, settings.tile_size,
        settings.alpha_min, settings.stop_t)
    accum = 1.0 - final_t
    if not with_cache:
        return image, accum
    cache = RenderCache(settings=settings, camera=camera, scene=scene,
                        segments=segments, sel=sel, world=world, proj=proj,
                        ranges=ranges, point_list=point_list, final_t=final_t,
                        n_contrib=n_contrib, image=image)
    return image, accum, cache


def _quat_poly_backward(qhat, grad_rot):
    """Gradient of the quaternion->matrix polynomial, per gaussian."""
    w, x, y, z = qhat[:, 0], qhat[:, 1], qhat[:, 2], qhat[:, 3]
    g = grad_rot
    gw = 2.0 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2]
                - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2.0 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2.0 * x * g[:, 1, 1]
                - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2.0 * x * g[:, 2, 2])
    gy = 2.0 * (-2.0 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
                + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2.0 * y * g[:, 2, 2])
    gz = 2.0 * (-2.0 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
                - 2.0 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([gw, gx, gy, gz], axis=1)


def render_backward(cache: RenderCache, grad_image: np.ndarray):
    """Gradients of sum(grad_image * rendered image) for every raw parameter.

    Returns {group name: {field: grad array}} matching the scene layout.
    """
    settings, camera = cache.settings, cache.camera
    world, proj, sel = cache.world, cache.proj, cache.sel
    mean2d = proj["mean2d"][sel]
    conic = proj["conic"][sel]
    opac = world["o"][sel]
    colors = np.clip(world["c"][sel], 0.0, 1.0)
    bg = np.asarray(settings.background, dtype=np.float64)

    g_mean2d, g_conic, g_opac, g_color = backends.blend_backward(
        mean2d, conic, opac, colors, bg, cache.ranges, cache.point_list,
        camera.height, camera.width, settings.tile_size,
        settings.alpha_min, settings.stop_t,
        cache.final_t, cache.n_contrib, grad_image)

    n_total = world["mu"].shape[0]
    v = sel.shape[0]
    cam = proj["cam"][sel]
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    jac = proj["jac"][sel]
    v3 = proj["v3"][sel]
    w_rot = proj["w_rot"]
    fx, fy = camera.fx, camera.fy

    # conic -> cov2d
    lam = np.empty((v, 2, 2))
    lam[:, 0, 0] = conic[:, 0]
    lam[:, 0, 1] = lam[:, 1, 0] = conic[:, 1]
    lam[:, 1, 1] = conic[:, 2]
    ghat = np.empty((v, 2, 2))
    ghat[:, 0, 0] = g_conic[:, 0]
    ghat[:, 0, 1] = ghat[:, 1, 0] = 0.5 * g_conic[:, 1]
    ghat[:, 1, 1] = g_conic[:, 2]
    g_cov = -np.einsum("nab,nbc,ncd->nad", lam, ghat, lam)

    # cov2d -> 3D covariance and camera point (through J)
    g_v3 = np.einsum("nai,nab,nbj->nij", jac, g_cov, jac)
    g_jac = 2.0 * np.einsum("nab,nbc,ncd->nad", g_cov, jac, v3)
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    g_x = g_jac[:, 0, 2] * (-fx * inv_z2)
    g_y = g_jac[:, 1, 2] * (-fy * inv_z2)
    g_z = (g_jac[:, 0, 0] * (-fx * inv_z2) + g_jac[:, 1, 1] * (-fy * inv_z2)
           + g_jac[:, 0, 2] * (2.0 * fx * x * inv_z2 * inv_z)
           + g_jac[:, 1, 2] * (2.0 * fy * y * inv_z2 * inv_z))
    # mean2d -> camera point
    g_u, g_vv = g_mean2d[:, 0], g_mean2d[:, 1]
    g_x = g_x + g_u * fx * inv_z
    g_y = g_y + g_vv * fy * inv_z
    g_z = g_z - g_u * fx * x * inv_z2 - g_vv * fy * y * inv_z2
    g_cam = np.stack([g_x, g_y, g_z], axis=1)
    g_mu_w = np.zeros((n_total, 3))
    g_mu_w[sel] = g_cam @ w_rot

    # 3D covariance -> world scale / rotation
    g_sigma = np.einsum("ai,nab,bj->nij", w_rot, g_v3, w_rot)
    a3 = proj["a3"][sel]
    rot3 = proj["rot3"][sel]
    s_sel = world["s"][sel]
    g_a3 = 2.0 * np.einsum("nij,njk->nik", g_sigma, a3)
    g_s = np.zeros((n_total, 3))
    g_s[sel] = np.einsum("nij,nij->nj", rot3, g_a3)
    g_rot3 = g_a3 * s_sel[:, None, :]
    g_qhat_w = np.zeros((n_total, 4))
    g_qhat_w[sel] = _quat_poly_backward(world["qhat"][sel], g_rot3)

    g_o = np.zeros(n_total)
    g_o[sel] = g_opac
    g_c = np.zeros((n_total, 3))
    g_c[sel] = g_color

    # scatter back through composition and activations
    grads = cache.scene.zero_grads()
    for name, group, start, stop, pose in cache.segments:
        out = grads[name]
        sl = slice(start, stop)
        gm = g_mu_w[sl]
        gq_w = g_qhat_w[sl]
        if pose is not None:
            gm = gm @ pose.rotation
            gq_w = gq_w @ quat_left_matrix(pose.quaternion())
        out["means"] += gm
        # normalization backward: qhat = q / |q|
        _, _, qhat_l, qn, o_act, _ = group.activated()
        gq = (gq_w - qhat_l * np.sum(qhat_l * gq_w, axis=1, keepdims=True)) / qn[:, None]
        out["quats"] += gq
        out["log_scales"] += g_s[sl] * np.exp(group.log_scales)
        out["logit_opacities"] += g_o[sl] * o_act * (1.0 - o_act)
        out["colors"] += g_c[sl]
    return grads


def grad_layout_for(scene: GaussianScene) -> dict:
    """Zero gradients shaped like the scene (used to accumulate renders)."""
    return scene.zero_grads()


# ---------------------------------------------------------------------------
# Checkpoint format


def _snap_preimage(raw, target32, activation):
    """Nudge raw so float32(activation(raw)) reproduces target32 exactly."""
    raw = np.asarray(raw, dtype=np.float64)
    flat = raw.reshape(-1)
    target = np.asarray(target32, dtype=np.float32).reshape(-1)
    for _ in range(64):
        cur = activation(flat).astype(np.float32)
        bad = np.nonzero(cur != target)[0]
        if bad.size == 0:
            return flat.reshape(raw.shape)
        up = cur[bad] < target[bad]
        stepped = np.nextafter(flat[bad], np.where(up, np.inf, -np.inf))
        flat[bad] = stepped
    raise FormatError("<scene>", "could not invert activation for checkpoint values")


def _pack_group(group: GaussianGroup) -> bytes:
    mu, s, qhat, qn, o, c = group.activated()
    quats = np.where((np.abs(qn - 1.0) > QUAT_SAVE_TOL)[:, None],
                     group.quats / np.where(qn == 0, 1.0, qn)[:, None],
                     group.quats)
    rec = np.concatenate([mu, s, quats, o[:, None], c], axis=1).astype("<f4")
    return rec.tobytes()


def _unpack_group(buf, count):
    rec = np.frombuffer(buf, dtype="<f4", count=count * 14).reshape(count, 14)
    rec = rec.astype(np.float64)
    mu = rec[:, 0:3]
    s = rec[:, 3:6]
    quats = rec[:, 6:10]
    alpha = rec[:, 10]
    c = rec[:, 11:14]
    if np.any(~np.isfinite(rec)):
        raise ValidationError("scene.values", "non-finite checkpoint entries")
    if np.any(s <= 0):
        raise ValidationError("scene.scale", "non-positive scales")
    if np.any(alpha <= 0) or np.any(alpha >= 1):
        raise ValidationError("scene.opacity", "opacities outside (0, 1)")
    if np.any(np.linalg.norm(quats, axis=1) == 0):
        raise ValidationError("scene.rotation", "zero quaternion")
    log_s = _snap_preimage(np.log(s), s.astype(np.float32), np.exp)
    logit_a = _snap_preimage(logit(alpha), alpha.astype(np.float32), expit)
    return GaussianGroup(mu, log_s, quats, logit_a, c)


def save_scene(path, scene: GaussianScene) -> None:
    """Write a scene checkpoint (magic LPGS, version, counts, f32 records)."""
    with open(path, "wb") as f:
        f.write(SCENE_MAGIC)
        f.write(struct.pack("<I", SCENE_VERSION))
        f.write(struct.pack("<Q", len(scene.background)))
        f.write(struct.pack("<Q", len(scene.actors)))
        f.write(_pack_group(scene.background))
        for actor in scene.actors:
            f.write(struct.pack("<Q", len(actor)))
            f.write(_pack_group(actor))


def load_scene(path, bundle=None) -> GaussianScene:
    """Read a scene checkpoint; optionally attach actor poses from a bundle."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 24 or blob[:4] != SCENE_MAGIC:
        raise FormatError(path, "bad magic, expected LPGS")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != SCENE_VERSION:
        raise FormatError(path, f"unsupported version {version}")
    (n_bg,) = struct.unpack_from("<Q", blob, 8)
    (n_actors,) = struct.unpack_from("<Q", blob, 16)
    off = 24
    need = n_bg * 56
    if len(blob) < off + need:
        raise FormatError(path, "truncated background block")
    background = _unpack_group(blob[off:off + need], n_bg)
    off += need
    actors = []
    for i in range(n_actors):
        if len(blob) < off + 8:
            raise FormatError(path, f"truncated actor {i} header")
        (cnt,) = struct.unpack_from("<Q", blob, off)
        off += 8
        need = cnt * 56
        if len(blob) < off + need:
            raise FormatError(path, f"truncated actor {i} block")
        actors.append(_unpack_group(blob[off:off + need], cnt))
        off += need
    if off != len(blob):
        raise FormatError(path, f"{len(blob) - off} trailing bytes")
    scene = GaussianScene(background, actors)
    if bundle is not None:
        scene.set_poses_from_bundle(bundle)
    return scene


# ---------------------------------------------------------------------------
# Initialization


def init_from_bundle(bundle, max_background: int = 20000, max_per_actor: int = 4000,
                     seed: int = 0) -> GaussianScene:
    """Seed gaussians from the aggregated LiDAR clouds.

    Isotropic scale = mean nearest-neighbor distance of the group's points;
    opacity 0.5; gray color. Background points are pooled over all frames.
    """
    from .lidar_raster import aggregate_actor_points
    from .scene_data import split_points

    rng = np.random.default_rng(seed)
    chunks = []
    for i in range(bundle.frame_count):
        pts, _, _, _ = split_points(bundle, i)
        chunks.append(pts)
    bg_pts = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 3))
    bg_pts = _subsample(bg_pts, max_background, rng)
    background = _group_from_points(bg_pts)
    actors = []
    for actor in range(bundle.actor_count):
        pts, _ = aggregate_actor_points(bundle, actor)
        pts = _subsample(pts, max_per_actor, rng)
        actors.append(_group_from_points(pts))
    scene = GaussianScene(background, actors)
    scene.set_poses_from_bundle(bundle)
    return scene


def _subsample(points, cap, rng):
    if points.shape[0] <= cap:
        return points
    keep = rng.choice(points.shape[0], size=cap, replace=False)
    return points[np.sort(keep)]


def _group_from_points(points) -> GaussianGroup:
    n = points.shape[0]
    if n == 0:
        return GaussianGroup.empty()
    if n == 1:
        mean_nn = 0.5
    else:
        from scipy.spatial import cKDTree
        tree = cKDTree(points)
        dists, _ = tree.query(points, k=2)
        mean_nn = float(np.mean(dists[:, 1]))
    scale = max(mean_nn, 1e-3)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianGroup.from_activated(
        points, np.full((n, 3), scale), quats, np.full(n, 0.5), np.full((n, 3), 0.5))
