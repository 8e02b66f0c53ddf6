"""Procedural driving-scene synthesizer with ray-cast ground truth.

Builds a small world (striped ground plane, box buildings, moving box
actors), drives a camera along a straight or curved track, renders
ground-truth images by ray-casting, and samples a LiDAR fan against the
same geometry so every emitted point verifiably lies on a surface. The
corrupt() op manufactures the artifact images used to train the painter.

World frame: x forward along travel, y left, z up. The camera frame is
x right, y down, z forward, so the base camera rotation has columns
right = (0,-1,0), down = (0,0,-1), forward = (1,0,0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import Pose
from .scene_data import BoundingBox, Camera, LidarFrame, SceneBundle, write_bundle

FRAME_DT = 0.1
CAMERA_HEIGHT = 1.6
SENSOR_HEIGHT = 1.8
SKY_COLOR = np.array([0.55, 0.65, 0.8])
ASPHALT_COLOR = np.array([0.15, 0.15, 0.16])
STRIPE_COLOR = np.array([0.9, 0.9, 0.85])
ASPHALT_REFLECT = 0.15
STRIPE_REFLECT = 0.9
LANE_YS = (-1.8, 1.8)
STRIPE_HALF_WIDTH = 0.08
ELEVATION_RANGE = (np.radians(-25.0), np.radians(5.0))
AZIMUTH_RANGE = (np.radians(-60.0), np.radians(60.0))

_BASE_CAM_ROT = np.array([[0.0, 0.0, 1.0],
                          [-1.0, 0.0, 0.0],
                          [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    extent: float = 60.0
    actors: int = 2
    frames: int = 5
    lidar_rays: int = 4096
    width: int = 128
    height: int = 128
    fx: float = 110.0
    fy: float = 110.0
    trajectory: str = "straight"
    speed: float = 12.0  # meters per second along the track
    holdout_offsets: tuple = ((2.0, 1.5), (-2.0, 1.5), (3.0, 1.5), (-3.0, 1.5))

    def __post_init__(self):
        if self.extent <= 0:
            raise ConfigError(f"extent must be > 0, got {self.extent}")
        for name in ("actors", "frames", "lidar_rays", "width", "height"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.width < 16 or self.height < 16:
            raise ConfigError("image size must be at least 16x16")
        if self.trajectory not in ("straight", "curve"):
            raise ConfigError(f"unknown trajectory {self.trajectory!r}")
        object.__setattr__(self, "holdout_offsets",
                           tuple((float(a), float(b)) for a, b in self.holdout_offsets))


@dataclass
class _Box:
    center: np.ndarray
    half: np.ndarray
    rotation: np.ndarray
    color: np.ndarray
    reflect: float


@dataclass
class SynthWorld:
    """Resolved geometry; the cast() method is the ground-truth ray tracer."""

    config: SynthConfig
    buildings: list
    actor_tracks: list  # (start, velocity, half_extents, rotation, color, reflect)
    track_positions: np.ndarray  # camera track, (frames, 3)
    track_yaws: np.ndarray

    def actor_box(self, actor: int, frame: int) -> _Box:
        start, vel, half, rot, color, reflect = self.actor_tracks[actor]
        center = start + vel * (frame * FRAME_DT)
        return _Box(center, half, rot, color, reflect)

    def boxes_at(self, frame: int):
        return self.buildings + [self.actor_box(a, frame)
                                 for a in range(len(self.actor_tracks))]

    def cast(self, origins, dirs, frame: int):
        """Nearest-surface intersection for a batch of world rays.

        Returns (t, color, reflect, hit). Misses have t = inf and sky color.
        """
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        n = dirs.shape[0]
        t_best = np.full(n, np.inf)
        color = np.tile(SKY_COLOR, (n, 1))
        reflect = np.zeros(n)

        # ground plane z = 0 with lane stripes
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_ground = np.where(dz < 0, -origins[:, 2] / dz, np.inf)
        ok = (t_ground > 1e-9) & (t_ground < t_best)
        if np.any(ok):
            hit_xy = origins[ok] + t_ground[ok, None] * dirs[ok]
            half_e = self.config.extent / 2.0
            inside = (np.abs(hit_xy[:, 0]) <= half_e * 2) & (np.abs(hit_xy[:, 1]) <= half_e)
            stripe = np.zeros(hit_xy.shape[0], dtype=bool)
            for lane_y in LANE_YS:
                stripe |= np.abs(hit_xy[:, 1] - lane_y) <= STRIPE_HALF_WIDTH
            sel = np.nonzero(ok)[0][inside]
            t_best[sel] = t_ground[sel]
            st = stripe[inside]
            color[sel] = np.where(st[:, None], STRIPE_COLOR, ASPHALT_COLOR)
            reflect[sel] = np.where(st, STRIPE_REFLECT, ASPHALT_REFLECT)

        for box in self.boxes_at(frame):
            o_l = (origins - box.center) @ box.rotation
            d_l = dirs @ box.rotation
            d_safe = np.where(np.abs(d_l) < 1e-12, 1e-12, d_l)
            t1 = (-box.half - o_l) / d_safe
            t2 = (box.half - o_l) / d_safe
            t_near = np.minimum(t1, t2).max(axis=1)
            t_far = np.maximum(t1, t2).min(axis=1)
            ok = (t_near <= t_far) & (t_near > 1e-9) & (t_near < t_best)
            t_best[ok] = t_near[ok]
            color[ok] = box.color
            reflect[ok] = box.reflect
        return t_best, color, reflect, np.isfinite(t_best)


def _build_world(cfg: SynthConfig) -> SynthWorld:
    rng = np.random.default_rng(cfg.seed)
    half_e = cfg.extent / 2.0

    yaws = np.zeros(cfg.frames)
    positions = np.zeros((cfg.frames, 3))
    if cfg.trajectory == "curve":
        yaw_rate = 0.3 / max(cfg.frames - 1, 1)
        yaws = yaw_rate * np.arange(cfg.frames)
    pos = np.array([0.0, 0.0, 0.0])
    for i in range(cfg.frames):
        positions[i] = pos
        heading = np.array([np.cos(yaws[i]), np.sin(yaws[i]), 0.0])
        pos = pos + cfg.speed * FRAME_DT * heading

    n_buildings = max(2, int(cfg.extent / 10.0))
    buildings = []
    for i in range(n_buildings):
        side = 1.0 if i % 2 == 0 else -1.0
        cx = rng.uniform(4.0, half_e * 1.6)
        cy = side * rng.uniform(6.0, 14.0)
        half = np.array([rng.uniform(1.5, 4.0), rng.uniform(1.5, 3.0),
                         rng.uniform(2.0, 6.0)])
        gray = rng.uniform(0.25, 0.75)
        color = np.clip(gray + rng.uniform(-0.08, 0.08, 3), 0.0, 1.0)
        buildings.append(_Box(np.array([cx, cy, half[2]]), half, np.eye(3),
                              color, float(rng.uniform(0.3, 0.6))))

    tracks = []
    for a in range(cfg.actors):
        lane = LANE_YS[a % len(LANE_YS)] * 0.5
        x0 = rng.uniform(4.0, 10.0 + 3.0 * a)
        half = np.array([rng.uniform(1.8, 2.4), rng.uniform(0.8, 1.0),
                         rng.uniform(0.7, 0.9)])
        speed = rng.uniform(4.0, 9.0)
        vel = np.array([speed, rng.uniform(-0.2, 0.2), 0.0])
        yaw = np.arctan2(vel[1], vel[0])
        rot = np.array([[np.cos(yaw), -np.sin(yaw), 0.0],
                        [np.sin(yaw), np.cos(yaw), 0.0],
                        [0.0, 0.0, 1.0]])
        color = rng.uniform(0.2, 0.9, 3)
        start = np.array([x0, lane, half[2]])
        tracks.append((start, vel, half, rot, color, float(rng.uniform(0.4, 0.7))))
    return SynthWorld(cfg, buildings, tracks, positions, yaws)


def _camera_at(cfg: SynthConfig, world: SynthWorld, frame: int) -> Camera:
    yaw = world.track_yaws[frame]
    rz = np.array([[np.cos(yaw), -np.sin(yaw), 0.0],
                   [np.sin(yaw), np.cos(yaw), 0.0],
                   [0.0, 0.0, 1.0]])
    rotation = rz @ _BASE_CAM_ROT
    translation = world.track_positions[frame] + np.array([0.0, 0.0, CAMERA_HEIGHT])
    return Camera(pose=Pose(rotation, translation), fx=cfg.fx, fy=cfg.fy,
                  cx=(cfg.width - 1) / 2.0, cy=(cfg.height - 1) / 2.0,
                  width=cfg.width, height=cfg.height, timestamp=frame * FRAME_DT)


def render_ground_truth(world: SynthWorld, camera: Camera, frame: int) -> np.ndarray:
    """Ray-cast image for an arbitrary camera; float (H, W, 3) in [0, 1]."""
    h, w = camera.height, camera.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    d_cam = np.stack([(us - camera.cx) / camera.fx,
                      (vs - camera.cy) / camera.fy,
                      np.ones_like(us)], axis=-1).reshape(-1, 3)
    d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
    d_world = d_cam @ camera.pose.rotation.T
    origins = np.broadcast_to(camera.pose.translation, d_world.shape)
    _, color, _, _ = world.cast(origins, d_world, frame)
    return color.reshape(h, w, 3)


def _lidar_directions(cfg: SynthConfig, yaw: float) -> np.ndarray:
    n_el = 16
    n_az = max(cfg.lidar_rays // n_el, 1)
    els = np.linspace(ELEVATION_RANGE[0], ELEVATION_RANGE[1], n_el)
    azs = np.linspace(AZIMUTH_RANGE[0], AZIMUTH_RANGE[1], n_az)
    az_grid, el_grid = np.meshgrid(azs + yaw, els)
    az_f, el_f = az_grid.reshape(-1), el_grid.reshape(-1)
    return np.stack([np.cos(el_f) * np.cos(az_f),
                     np.cos(el_f) * np.sin(az_f),
                     np.sin(el_f)], axis=1)


def _sample_lidar(world: SynthWorld, frame: int) -> LidarFrame:
    cfg = world.config
    origin = world.track_positions[frame] + np.array([0.0, 0.0, SENSOR_HEIGHT])
    dirs = _lidar_directions(cfg, world.track_yaws[frame])
    if cfg.lidar_rays == 0:
        return LidarFrame(frame, frame * FRAME_DT, np.zeros((0, 3)), np.zeros(0))
    origins = np.broadcast_to(origin, dirs.shape)
    t, _, reflect, hit = world.cast(origins, dirs, frame)
    points = origin + t[hit, None] * dirs[hit]
    return LidarFrame(frame, frame * FRAME_DT, points, reflect[hit])


def quantize_image(img: np.ndarray) -> np.ndarray:
    """Snap floats to the 8-bit grid the bundle's PPM files will store."""
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255) / 255.0


def generate(cfg: SynthConfig):
    """Build the world; returns (bundle, holdout list of (Camera, image)).

    The bundle's images are pre-quantized to the 8-bit PPM grid so the
    in-memory bundle matches a written-and-reloaded one exactly.
    """
    world = _build_world(cfg)
    cameras, lidar_frames, images = [], [], []
    boxes = []
    for i in range(cfg.frames):
        cam = _camera_at(cfg, world, i)
        cameras.append(cam)
        images.append(quantize_image(render_ground_truth(world, cam, i)))
        lidar_frames.append(_sample_lidar(world, i))
        for a in range(cfg.actors):
            box = world.actor_box(a, i)
            boxes.append(BoundingBox(pose=Pose(box.rotation, box.center),
                                     half_extents=box.half, actor_id=a,
                                     frame_index=i))
    holdout = []
    for lateral, vertical in cfg.holdout_offsets:
        for i in range(cfg.frames):
            cam = cameras[i].shifted(lateral, vertical)
            holdout.append((cam, quantize_image(render_ground_truth(world, cam, i))))
    bundle = SceneBundle(cameras=cameras, lidar=lidar_frames, boxes=boxes,
                         image_paths=[None] * cfg.frames, frame_count=cfg.frames,
                         actor_count=cfg.actors, sync_tolerance_s=FRAME_DT / 2.0)
    for i, img in enumerate(images):
        bundle._image_cache[i] = img
    bundle.validate()
    return bundle, holdout


def build_world(cfg: SynthConfig) -> SynthWorld:
    """The resolved geometry, exposed so tests can re-cast LiDAR rays."""
    return _build_world(cfg)


def write_generated(path, cfg: SynthConfig) -> None:
    """Generate and write a bundle directory plus holdout/ images."""
    import os

    from .image_io import write_ppm

    bundle, holdout = generate(cfg)
    images = [bundle.image(i) for i in range(cfg.frames)]
    write_bundle(path, bundle.cameras, bundle.lidar, bundle.boxes, images,
                 cfg.actors, bundle.sync_tolerance_s)
    holdout_dir = os.path.join(path, "holdout")
    os.makedirs(holdout_dir, exist_ok=True)
    meta = []
    n = cfg.frames
    for k, (cam, img) in enumerate(holdout):
        offset_idx, frame = divmod(k, n)
        name = f"{offset_idx:02d}_{frame:06d}.ppm"
        write_ppm(os.path.join(holdout_dir, name), img)
        meta.append({
            "file": name, "frame_index": frame,
            "lateral": cfg.holdout_offsets[offset_idx][0],
            "vertical": cfg.holdout_offsets[offset_idx][1],
        })
    from .scene_data import _dump_json
    _dump_json(os.path.join(holdout_dir, "views.json"), meta)


# ---------------------------------------------------------------------------
# Corruption


def corrupt(image: np.ndarray, seed: int, severity: float) -> np.ndarray:
    """Seeded artifact synthesis: patch dropout, smearing, stripe erasure.

    A fully corrupted variant is built once from the seed; severity then
    reveals a prefix of its pixels in corruption order. Pixel sets are
    therefore nested across severities, which makes the per-pixel squared
    error sum (and hence PSNR degradation) monotone in severity.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity {severity} outside [0, 1]")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    out = image.copy()
    if severity == 0.0:
        return out
    h, w = image.shape[:2]
    rng = np.random.default_rng(seed)
    full = image.copy()
    covered = np.zeros((h, w), dtype=bool)
    reveal_order = []

    def mark(mask):
        new = mask & ~covered
        reveal_order.append(np.nonzero(new.reshape(-1))[0])
        covered[new] = True

    # patch dropout: random fills until the union covers 28% of the image
    target = 0.28 * h * w
    for _ in range(64):
        if covered.sum() >= target:
            break
        ry, rx = rng.integers(0, h), rng.integers(0, w)
        rh = rng.integers(max(h // 10, 2), max(h // 4, 3))
        rw = rng.integers(max(w // 10, 2), max(w // 4, 3))
        fill = rng.uniform(0, 1, 3)
        y1, x1 = min(ry + rh, h), min(rx + rw, w)
        full[ry:y1, rx:x1] = fill
        mask = np.zeros((h, w), dtype=bool)
        mask[ry:y1, rx:x1] = True
        mark(mask)

    # horizontal smear bands
    for _ in range(6):
        by = int(rng.integers(0, max(h - 4, 1)))
        bh = int(rng.integers(2, max(h // 8, 3)))
        shift = int(rng.integers(3, max(w // 6, 4)))
        y1 = min(by + bh, h)
        band = full[by:y1]
        full[by:y1] = 0.5 * band + 0.5 * np.roll(band, shift, axis=1)
        mask = np.zeros((h, w), dtype=bool)
        mask[by:y1] = True
        mark(mask)

    # stripe erasure: flatten lower-half column blocks to the clean row mean
    n_blocks = max(w // 8, 1)
    block_w = max(w // n_blocks, 1)
    row_mean = image[h // 2:].mean(axis=1, keepdims=True)
    for blk in rng.permutation(n_blocks)[:max(n_blocks // 2, 1)]:
        x0 = int(blk) * block_w
        x1 = min(x0 + block_w, w)
        full[h // 2:, x0:x1] = row_mean
        mask = np.zeros((h, w), dtype=bool)
        mask[h // 2:, x0:x1] = True
        mark(mask)

    order = np.concatenate(reveal_order)
    n_reveal = int(round(severity * order.size))
    sel = order[:n_reveal]
    out.reshape(-1, 3)[sel] = np.clip(full, 0.0, 1.0).reshape(-1, 3)[sel]
    return out
