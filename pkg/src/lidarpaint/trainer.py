"""Two-phase scene reconstruction: fit the captured trajectory, then mix in
painted novel-view guidance.

Phase one (train_initial) optimizes the gaussians against the bundle's own
frames for T_s steps. make_guidance then shifts each camera by the
configured lateral/vertical offsets, renders the artifact image and the
LiDAR condition, and runs the painter to produce guidance targets. Phase
two (train_expanded) continues to T_e, drawing a guidance sample with
probability p_novel each step (down-weighted by lambda_novel) and an
original frame otherwise. run_rounds repeats guidance + expansion,
extending the budget and checkpointing per round.

Determinism: one rng drives both phases, and every step draws its uniform
branch variable before the frame index, so a p_novel = 0 expansion
continues the initial phase's sample stream exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError
from .gaussian_scene import (GaussianGroup, RenderSettings, load_scene, render,
                             render_backward, save_scene)
from .lidar_raster import condition_image, render_lidar_image
from .losses import novel_view_loss, original_view_loss, psnr
from .scene_data import Camera
from .geometry import Pose

# per-group step sizes, 3DGS-style; means decay exponentially to 1e-2 of start
GROUP_LRS = {
    "means": 1.6e-4,
    "log_scales": 5e-3,
    "quats": 1e-3,
    "logit_opacities": 5e-2,
    "colors": 2.5e-3,
}
MEANS_LR_DECAY = 1e-2
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15
DENSIFY_INTERVAL = 500
DENSIFY_GRAD_THRESHOLD = 2e-4
PRUNE_OPACITY = 0.005
FULL_SCALE_T_S = 7000   # documented full-scale budgets; desk defaults below
FULL_SCALE_T_E = 30000


@dataclass(frozen=True)
class TrainConfig:
    t_s: int = 1500
    t_e: int = 6000
    p_novel: float = 0.4
    lambda_novel: float = 0.2
    rounds: int = 1
    seed: int = 0
    offsets: tuple = ((2.0, 1.5), (-2.0, 1.5), (3.0, 1.5), (-3.0, 1.5))
    densify: bool = False

    def __post_init__(self):
        if not 0 <= self.t_s <= self.t_e:
            raise ConfigError(f"need 0 <= t_s <= t_e, got {self.t_s}, {self.t_e}")
        if not 0.0 <= self.p_novel <= 1.0:
            raise ConfigError(f"p_novel {self.p_novel} outside [0, 1]")
        if self.lambda_novel < 0:
            raise ConfigError("lambda_novel must be >= 0")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        object.__setattr__(self, "offsets",
                           tuple((float(a), float(b)) for a, b in self.offsets))


@dataclass
class GuidanceSet:
    """Painted novel-view targets: (camera, guidance, condition, frame_index)."""

    items: list = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def validate(self) -> None:
        shapes = {np.asarray(g).shape for _, g, _, _ in self.items}
        if len(shapes) > 1:
            raise ConfigError(f"guidance images disagree on shape: {shapes}")


class Trainer:
    """Owns the rng, optimizer state, and iteration counter across phases."""

    def __init__(self, scene, bundle, cfg: TrainConfig,
                 settings: RenderSettings = None):
        self.scene = scene
        self.bundle = bundle
        self.cfg = cfg
        self.settings = settings or RenderSettings()
        self.rng = np.random.default_rng(cfg.seed)
        self.iteration = 0
        self.metrics = []
        self.horizon = max(cfg.t_e + (cfg.rounds - 1) * (cfg.t_e - cfg.t_s), 1)
        self._adam = {name: {f: [np.zeros_like(getattr(g, f)),
                                 np.zeros_like(getattr(g, f))]
                             for f in GaussianGroup.FIELDS}
                      for name, g in scene.groups()}
        self._pos_grad_sum = {name: np.zeros(len(g)) for name, g in scene.groups()}
        self._pos_grad_count = 0

    def _means_lr(self) -> float:
        frac = min(self.iteration / self.horizon, 1.0)
        return GROUP_LRS["means"] * MEANS_LR_DECAY ** frac

    def _apply_grads(self, grads: dict) -> None:
        t = self.iteration + 1
        bc1 = 1.0 - ADAM_BETA1 ** t
        bc2 = 1.0 - ADAM_BETA2 ** t
        for name, group in self.scene.groups():
            if len(group) == 0:
                continue
            for f in GaussianGroup.FIELDS:
                g = grads[name][f]
                m, v = self._adam[name][f]
                m *= ADAM_BETA1
                m += (1.0 - ADAM_BETA1) * g
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * g * g
                lr = self._means_lr() if f == "means" else GROUP_LRS[f]
                step = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
                getattr(group, f)[...] -= step
            np.clip(group.colors, 0.0, 1.0, out=group.colors)
            self._pos_grad_sum[name] += np.linalg.norm(grads[name]["means"], axis=1)
        self._pos_grad_count += 1

    def step(self, guidance: GuidanceSet = None, p_novel: float = 0.0) -> float:
        """One optimization step; the branch draw precedes the index draw."""
        u = self.rng.random()
        novel = guidance is not None and len(guidance) > 0 and u < p_novel
        if novel:
            k = int(self.rng.integers(0, len(guidance)))
            camera, target, _, frame = guidance.items[k]
            target = np.asarray(target, dtype=np.float64)
            kind = "novel"
        else:
            frame = int(self.rng.integers(0, self.bundle.frame_count))
            camera = self.bundle.cameras[frame]
            target = self.bundle.image(frame)
            kind = "original"
        image, _, cache = render(self.scene, frame, camera, self.settings,
                                 with_cache=True)
        if kind == "novel":
            value, grad_img, parts = novel_view_loss(
                image, target, lambda_novel=self.cfg.lambda_novel)
        else:
            value, grad_img, parts = original_view_loss(image, target)
        if not np.isfinite(value):
            raise TrainingError(self.iteration, f"non-finite loss {value}")
        grads = render_backward(cache, grad_img)
        self._apply_grads(grads)
        self.metrics.append({
            "iteration": self.iteration, "kind": kind, "loss": float(value),
            "l1": parts["l1"], "ssim": parts["ssim"],
            "perceptual": parts["perceptual"], "psnr": psnr(image, target),
        })
        self.iteration += 1
        if self.cfg.densify and self.iteration % DENSIFY_INTERVAL == 0:
            self._densify_and_prune()
        return float(value)

    def run_until(self, until: int, guidance: GuidanceSet = None,
                  p_novel: float = 0.0) -> list:
        start = len(self.metrics)
        while self.iteration < until:
            self.step(guidance, p_novel)
        return [row["loss"] for row in self.metrics[start:]]

    def train_initial(self) -> list:
        """Phase one: fit the captured trajectory for t_s steps."""
        return self.run_until(self.cfg.t_s)

    def train_expanded(self, guidance: GuidanceSet, until: int = None) -> list:
        """Phase two: mixed original/guidance steps up to t_e (or `until`)."""
        if self.cfg.p_novel > 0 and (guidance is None or len(guidance) == 0):
            raise ConfigError("p_novel > 0 requires a non-empty guidance set")
        return self.run_until(until if until is not None else self.cfg.t_e,
                              guidance, self.cfg.p_novel)

    # -- densification --

    def _densify_and_prune(self) -> None:
        """Clone small / split large high-gradient gaussians; drop faint ones."""
        count = max(self._pos_grad_count, 1)
        for name, group in self.scene.groups():
            if len(group) == 0:
                continue
            mean_grad = self._pos_grad_sum[name] / count
            scales = np.exp(group.log_scales)
            opacity = 1.0 / (1.0 + np.exp(-group.logit_opacities))
            keep = opacity >= PRUNE_OPACITY
            hot = (mean_grad > DENSIFY_GRAD_THRESHOLD) & keep
            small = hot & (scales.max(axis=1) <= np.median(scales.max(axis=1)))
            big = hot & ~small
            new_fields = {f: [getattr(group, f)[keep]] for f in GaussianGroup.FIELDS}
            adam_new = {f: [[self._adam[name][f][0][keep]],
                            [self._adam[name][f][1][keep]]]
                        for f in GaussianGroup.FIELDS}

            def add(mask, mean_shift, scale_shift):
                if not np.any(mask):
                    return
                for f in GaussianGroup.FIELDS:
                    arr = getattr(group, f)[mask].copy()
                    if f == "means":
                        arr += mean_shift * scales[mask]
                    elif f == "log_scales":
                        arr += scale_shift
                    new_fields[f].append(arr)
                    adam_new[f][0].append(np.zeros_like(arr))
                    adam_new[f][1].append(np.zeros_like(arr))

            add(small, 0.5, 0.0)                  # clone, nudged by half a scale
            add(big, 0.0, -np.log(1.6))           # split in place, shrunk 1.6x
            if np.any(big):
                new_fields["log_scales"][0][big[keep]] -= np.log(1.6)
            for f in GaussianGroup.FIELDS:
                setattr(group, f, np.concatenate(new_fields[f]))
                self._adam[name][f][0] = np.concatenate(adam_new[f][0])
                self._adam[name][f][1] = np.concatenate(adam_new[f][1])
            self._pos_grad_sum[name] = np.zeros(len(group))
        self._pos_grad_count = 0


# ---------------------------------------------------------------------------
# Guidance


def make_guidance(scene, bundle, painter, offsets,
                  settings: RenderSettings = None) -> GuidanceSet:
    """Render shifted views, paint them, and collect guidance triples.

    `painter` may be a PainterModel, a callable (artifact, condition) ->
    image, or None for an identity painter (guidance = raw render).
    """
    settings = settings or RenderSettings()
    if painter is None:
        paint_fn = lambda a, c: a
    elif callable(painter):
        paint_fn = painter
    else:
        from .fusion_net import paint
        paint_fn = lambda a, c, _m=painter: paint(_m, a, c)
    items = []
    for i in range(bundle.frame_count):
        for off in offsets:
            try:
                cam = bundle.cameras[i].shifted(off[0], off[1])
                artifact, _ = render(scene, i, cam, settings)
                cond = condition_image(render_lidar_image(bundle, i, cam))
                guide = np.asarray(paint_fn(artifact, cond), dtype=np.float64)
            except Exception as exc:
                raise TrainingError(
                    i, f"guidance failed at frame {i}, offset {off}: {exc}") from exc
            items.append((cam, guide, cond, i))
    gs = GuidanceSet(items)
    gs.validate()
    return gs


def _round_f32(gs: GuidanceSet) -> GuidanceSet:
    """Snap guidance arrays to float32, matching a disk round-trip."""
    items = [(cam, np.asarray(g, np.float32).astype(np.float64),
              np.asarray(c, np.float32).astype(np.float64), f)
             for cam, g, c, f in gs.items]
    return GuidanceSet(items)


def save_guidance(path, gs: GuidanceSet) -> None:
    from .image_io import write_f32
    from .scene_data import _dump_json

    os.makedirs(path, exist_ok=True)
    views = []
    for k, (cam, guide, cond, frame) in enumerate(gs.items):
        write_f32(os.path.join(path, f"guide_{k:04d}.f32"), guide)
        write_f32(os.path.join(path, f"cond_{k:04d}.f32"), cond)
        views.append({
            "frame_index": int(frame),
            "rotation": [float(v) for v in cam.pose.rotation.reshape(-1)],
            "translation": [float(v) for v in cam.pose.translation],
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height, "timestamp": cam.timestamp,
            "guide_shape": list(np.asarray(guide).shape),
            "cond_shape": list(np.asarray(cond).shape),
        })
    _dump_json(os.path.join(path, "views.json"), views)


def load_guidance(path) -> GuidanceSet:
    from .image_io import read_f32

    with open(os.path.join(path, "views.json"), "r", encoding="utf-8") as f:
        views = json.load(f)
    items = []
    for k, v in enumerate(views):
        rot = np.array(v["rotation"], dtype=np.float64).reshape(3, 3)
        cam = Camera(pose=Pose(rot, np.array(v["translation"])),
                     fx=v["fx"], fy=v["fy"], cx=v["cx"], cy=v["cy"],
                     width=v["width"], height=v["height"],
                     timestamp=v["timestamp"])
        guide = read_f32(os.path.join(path, f"guide_{k:04d}.f32"),
                         tuple(v["guide_shape"]))
        cond = read_f32(os.path.join(path, f"cond_{k:04d}.f32"),
                        tuple(v["cond_shape"]))
        items.append((cam, guide, cond, int(v["frame_index"])))
    return GuidanceSet(items)


# ---------------------------------------------------------------------------
# Full pipeline


def train_initial(scene, bundle, cfg: TrainConfig,
                  settings: RenderSettings = None):
    """One-shot phase one; returns (trainer, loss trace)."""
    trainer = Trainer(scene, bundle, cfg, settings)
    trace = trainer.train_initial()
    return trainer, trace


def run_rounds(scene, bundle, painter, cfg: TrainConfig, out_dir=None,
               settings: RenderSettings = None):
    """Initial fit, then `rounds` x (guidance regeneration + expansion).

    Each round extends the step budget by (t_e - t_s). With an out_dir,
    guidance caches and per-round `round_K/scene.gsb` checkpoints are
    written, plus a metrics.jsonl trace. Returns the trained scene.
    """
    trainer = Trainer(scene, bundle, cfg, settings)
    trainer.train_initial()
    budget = cfg.t_e
    for rnd in range(1, cfg.rounds + 1):
        gs = make_guidance(scene, bundle, painter, cfg.offsets, trainer.settings)
        if out_dir is not None:
            gdir = os.path.join(out_dir, f"round_{rnd}", "guidance")
            save_guidance(gdir, gs)
            gs = load_guidance(gdir)
        else:
            gs = _round_f32(gs)
        trainer.train_expanded(gs, until=budget)
        if out_dir is not None:
            save_scene(os.path.join(out_dir, f"round_{rnd}", "scene.gsb"), scene)
        budget += cfg.t_e - cfg.t_s
    if out_dir is not None:
        write_metrics(os.path.join(out_dir, "metrics.jsonl"), trainer.metrics)
    return scene, trainer


def write_metrics(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def evaluate_views(scene, views, settings: RenderSettings = None) -> dict:
    """Mean PSNR/SSIM/L1 of scene renders against (camera, image, frame) views."""
    from .losses import image_metrics

    settings = settings or RenderSettings()
    sums = {"psnr": 0.0, "ssim": 0.0, "l1": 0.0}
    for camera, target, frame in views:
        image, _ = render(scene, frame, camera, settings)
        m = image_metrics(image, target)
        for k in sums:
            sums[k] += m[k]
    n = max(len(views), 1)
    return {k: v / n for k, v in sums.items()}
