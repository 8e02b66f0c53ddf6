"""Shared fixtures: a small synthetic bundle and scene builders."""

import numpy as np
import pytest

from lidarpaint.gaussian_scene import GaussianGroup, GaussianScene, init_from_bundle
from lidarpaint.geometry import Pose, quat_to_matrix
from lidarpaint.scene_data import Camera
from lidarpaint.synth import SynthConfig, generate


TINY_CFG = SynthConfig(seed=7, extent=40.0, actors=1, frames=3, lidar_rays=2048,
                       width=64, height=64, fx=55.0, fy=55.0,
                       holdout_offsets=((2.0, 1.5), (-2.0, 1.5)))


@pytest.fixture(scope="session")
def tiny_bundle():
    bundle, _ = generate(TINY_CFG)
    return bundle


@pytest.fixture(scope="session")
def tiny_holdout():
    _, holdout = generate(TINY_CFG)
    return holdout


@pytest.fixture(scope="session")
def tiny_scene(tiny_bundle):
    return init_from_bundle(tiny_bundle, max_background=800, max_per_actor=200,
                            seed=7)


def random_rotation(rng):
    axis = rng.normal(0, 1, 3)
    axis /= np.linalg.norm(axis)
    half = rng.uniform(0, np.pi) / 2.0
    return quat_to_matrix(np.array([np.cos(half), *(np.sin(half) * axis)]))


def random_group(rng, n, center=(8.0, 0.0, 0.0), spread=3.0):
    return GaussianGroup(
        means=np.asarray(center) + rng.normal(0, spread, (n, 3)),
        log_scales=rng.uniform(-2.0, 0.3, (n, 3)),
        quats=rng.normal(0, 1, (n, 4)),
        logit_opacities=rng.uniform(-2.0, 3.0, n),
        colors=rng.uniform(0, 1, (n, 3)))


def random_scene(rng, n_bg=40, n_actor=8, frames=(0,)):
    """Background plus one actor posed at each requested frame."""
    poses = {}
    for f in frames:
        poses[f] = Pose(random_rotation(rng), rng.normal(0, 2, 3) + [6.0, 0, 0])
    scene = GaussianScene(
        background=random_group(rng, n_bg),
        actors=[random_group(rng, n_actor, center=(0, 0, 0), spread=0.5)],
        actor_poses=[poses])
    return scene


def make_camera(width=64, height=64, fx=60.0, fy=60.0, height_m=1.2):
    rot = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    return Camera(pose=Pose(rot, np.array([0.0, 0.0, height_m])),
                  fx=fx, fy=fy, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                  width=width, height=height, timestamp=0.0)
