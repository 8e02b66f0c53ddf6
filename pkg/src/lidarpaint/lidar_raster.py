"""Aggregated LiDAR clouds and their rasterization into condition images.

The background cloud is the union of background points over a symmetric,
clamped temporal window; actor clouds are box-local unions over all frames,
reposed per frame by their box annotation. Rasterization z-buffers splatted
points under a fixed deterministic order (depth, then input index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backends
from .errors import ValidationError
from .scene_data import SceneBundle, split_points

DEFAULT_WINDOW = 5
DEFAULT_SPLAT_RADIUS = 1


@dataclass(frozen=True)
class LidarImage:
    """Per-pixel depth (meters, 0 = empty) and intensity (0 where empty)."""

    depth: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        i = np.asarray(self.intensity, dtype=np.float64)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "intensity", i)
        if d.shape != i.shape or d.ndim != 2:
            raise ValidationError("lidar_image", f"bad shapes {d.shape} vs {i.shape}")
        if d.size and d.min() < 0:
            raise ValidationError("lidar_image.depth", "negative depth")
        if np.any((d == 0) & (i != 0)):
            raise ValidationError("lidar_image.intensity", "intensity on empty pixel")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def validity(self) -> np.ndarray:
        return self.depth > 0


def aggregate_background(bundle: SceneBundle, frame_index: int, window: int = DEFAULT_WINDOW):
    """Union of background points over the clamped symmetric window.

    Returns (points (N, 3) world, intensities (N,)).
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    if not (0 <= frame_index < bundle.frame_count):
        raise ValidationError("frame_index",
                              f"{frame_index} outside [0, {bundle.frame_count})")
    half = (window - 1) // 2
    lo = max(0, frame_index - half)
    hi = min(bundle.frame_count - 1, frame_index + half)
    chunks_p, chunks_i = [], []
    for i in range(lo, hi + 1):
        pts, inten, _, _ = split_points(bundle, i)
        chunks_p.append(pts)
        chunks_i.append(inten)
    return np.concatenate(chunks_p, axis=0), np.concatenate(chunks_i, axis=0)


def aggregate_actor_points(bundle: SceneBundle, actor_id: int):
    """Box-local union of one actor's points over all frames."""
    chunks_p, chunks_i = [np.zeros((0, 3))], [np.zeros(0)]
    for i in range(bundle.frame_count):
        _, _, actor_pts, actor_inten = split_points(bundle, i)
        if actor_pts[actor_id].size:
            chunks_p.append(actor_pts[actor_id])
            chunks_i.append(actor_inten[actor_id])
    return np.concatenate(chunks_p, axis=0), np.concatenate(chunks_i, axis=0)


def place_actor(actor_points: np.ndarray, box) -> np.ndarray:
    """Box-local actor points -> world points at the box's pose."""
    return box.pose.apply(np.asarray(actor_points, dtype=np.float64).reshape(-1, 3))


def rasterize_points(points, intensities, camera, splat_radius: int = DEFAULT_SPLAT_RADIUS):
    """Z-buffer world points into a LidarImage for the given camera.

    Each point with positive camera-space depth and an in-bounds rounded
    projection writes depth and intensity to every pixel within Chebyshev
    distance ``splat_radius``; per pixel the smallest (depth, input index)
    wins. Rounding is half-up: floor(x + 0.5).
    """
    if splat_radius < 0:
        raise ValueError(f"splat_radius must be >= 0, got {splat_radius}")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    intensities = np.asarray(intensities, dtype=np.float64).reshape(-1)
    h, w = camera.height, camera.width
    cam_pts = camera.world_to_camera(points)
    z = cam_pts[:, 2]
    keep = z > 0
    cam_pts, z = cam_pts[keep], z[keep]
    inten = intensities[keep]
    u = camera.fx * cam_pts[:, 0] / z + camera.cx
    v = camera.fy * cam_pts[:, 1] / z + camera.cy
    px = np.floor(u + 0.5).astype(np.int64)
    py = np.floor(v + 0.5).astype(np.int64)
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    px, py, z, inten = px[inside], py[inside], z[inside], inten[inside]

    r = int(splat_radius)
    if r > 0:
        span = 2 * r + 1
        offs = np.arange(-r, r + 1)
        ox = np.tile(np.tile(offs, span), px.size)
        oy = np.tile(np.repeat(offs, span), px.size)
        px = np.repeat(px, span * span) + ox
        py = np.repeat(py, span * span) + oy
        z = np.repeat(z, span * span)
        inten = np.repeat(inten, span * span)
        ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        px, py, z, inten = px[ok], py[ok], z[ok], inten[ok]

    values = np.stack([z, inten], axis=1) if z.size else np.zeros((0, 2))
    out, _ = backends.rasterize_zbuffer(px, py, z, values, h, w)
    return LidarImage(depth=out[:, :, 0], intensity=out[:, :, 1])


def render_lidar_image(bundle: SceneBundle, frame_index: int, camera,
                       window: int = DEFAULT_WINDOW,
                       splat_radius: int = DEFAULT_SPLAT_RADIUS) -> LidarImage:
    """Full condition rendering: aggregated background plus reposed actors."""
    pts, inten = aggregate_background(bundle, frame_index, window)
    chunks_p, chunks_i = [pts], [inten]
    for box in bundle.boxes_at(frame_index):
        local, local_inten = aggregate_actor_points(bundle, box.actor_id)
        if local.size:
            chunks_p.append(place_actor(local, box))
            chunks_i.append(local_inten)
    all_pts = np.concatenate(chunks_p, axis=0)
    all_inten = np.concatenate(chunks_i, axis=0)
    return rasterize_points(all_pts, all_inten, camera, splat_radius)


def condition_image(lidar_image: LidarImage) -> np.ndarray:
    """LidarImage -> (H, W, 3) network input in [0, 1].

    Channels: inverse depth normalized by its per-image maximum, intensity,
    validity mask.
    """
    valid = lidar_image.validity()
    inv = np.zeros_like(lidar_image.depth)
    np.divide(1.0, lidar_image.depth, out=inv, where=valid)
    peak = inv.max() if inv.size else 0.0
    if peak > 0:
        inv = inv / peak
    return np.stack([inv, lidar_image.intensity, valid.astype(np.float64)], axis=2)
