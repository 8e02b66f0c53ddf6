"""Point aggregation, reposing, and z-buffer rasterization."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarpaint.errors import ValidationError
from lidarpaint.geometry import Pose
from lidarpaint.lidar_raster import (aggregate_background, condition_image,
                                     place_actor, rasterize_points,
                                     render_lidar_image)
from lidarpaint.scene_data import BoundingBox, split_points

from conftest import make_camera, random_rotation


def test_window_of_one_is_own_frame(tiny_bundle):
    pts, inten = aggregate_background(tiny_bundle, 1, window=1)
    bg, bg_i, _, _ = split_points(tiny_bundle, 1)
    assert np.array_equal(pts, bg)
    assert np.array_equal(inten, bg_i)


def test_window_clamps_at_sequence_start(tiny_bundle):
    pts, _ = aggregate_background(tiny_bundle, 0, window=3)
    a, _, _, _ = split_points(tiny_bundle, 0)
    b, _, _, _ = split_points(tiny_bundle, 1)
    assert pts.shape[0] == a.shape[0] + b.shape[0]


def test_window_matches_concatenation_oracle(tiny_bundle):
    pts, inten = aggregate_background(tiny_bundle, 1, window=5)
    chunks, chunks_i = [], []
    for f in range(tiny_bundle.frame_count):  # window 5 covers all 3 frames
        bg, bg_i, _, _ = split_points(tiny_bundle, f)
        chunks.append(bg)
        chunks_i.append(bg_i)
    want = np.concatenate(chunks)
    got_sorted = pts[np.lexsort(pts.T)]
    want_sorted = want[np.lexsort(want.T)]
    assert np.allclose(got_sorted, want_sorted)
    assert inten.shape[0] == want.shape[0]


def test_even_window_rejected(tiny_bundle):
    with pytest.raises(ValueError):
        aggregate_background(tiny_bundle, 0, window=2)
    with pytest.raises(ValueError):
        aggregate_background(tiny_bundle, 0, window=0)


def test_place_actor_identity():
    box = BoundingBox(Pose(np.eye(3), np.zeros(3)), np.ones(3), 0, 0)
    pts = np.array([[1.0, 2.0, 3.0], [0.5, 0.0, -1.0]])
    assert np.allclose(place_actor(pts, box), pts)


def test_place_actor_90deg_z():
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    box = BoundingBox(Pose(rot, np.zeros(3)), np.ones(3), 0, 0)
    out = place_actor(np.array([[1.0, 0.0, 0.0]]), box)
    assert np.allclose(out, [[0.0, 1.0, 0.0]], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_place_actor_matches_per_point_oracle(seed):
    rng = np.random.default_rng(seed)
    box = BoundingBox(Pose(random_rotation(rng), rng.normal(0, 5, 3)),
                      np.ones(3), 0, 0)
    pts = rng.normal(0, 2, (50, 3))
    out = place_actor(pts, box)
    for i in range(pts.shape[0]):
        want = box.pose.rotation @ pts[i] + box.pose.translation
        assert np.allclose(out[i], want, atol=1e-12)


def test_single_point_at_principal_pixel():
    cam = make_camera(width=9, height=9, height_m=0.0)
    # camera looks along world +x; a point 5 m ahead on the axis
    pts = np.array([[5.0, 0.0, 0.0]])
    img = rasterize_points(pts, np.array([0.7]), cam, splat_radius=0)
    assert img.depth[4, 4] == pytest.approx(5.0)
    assert img.intensity[4, 4] == pytest.approx(0.7)
    mask = np.ones((9, 9), dtype=bool)
    mask[4, 4] = False
    assert np.all(img.depth[mask] == 0.0)


def test_zbuffer_keeps_nearest():
    cam = make_camera(width=9, height=9, height_m=0.0)
    pts = np.array([[5.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    img = rasterize_points(pts, np.array([0.2, 0.9]), cam, splat_radius=0)
    assert img.depth[4, 4] == pytest.approx(3.0)
    assert img.intensity[4, 4] == pytest.approx(0.9)


def test_behind_camera_and_out_of_frame_skipped():
    cam = make_camera(width=9, height=9, height_m=0.0)
    pts = np.array([[-5.0, 0.0, 0.0], [1.0, 100.0, 0.0]])
    img = rasterize_points(pts, np.array([1.0, 1.0]), cam, splat_radius=0)
    assert np.all(img.depth == 0.0)


def test_splat_radius_chebyshev_footprint():
    cam = make_camera(width=9, height=9, height_m=0.0)
    pts = np.array([[5.0, 0.0, 0.0]])
    img = rasterize_points(pts, np.array([1.0]), cam, splat_radius=1)
    filled = img.depth > 0
    assert filled.sum() == 9
    assert np.all(filled[3:6, 3:6])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_rasterize_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    cam = make_camera(width=64, height=64)
    pts = np.column_stack([rng.uniform(0.5, 30, 2000),
                           rng.uniform(-15, 15, 2000),
                           rng.uniform(-2, 6, 2000)])
    inten = rng.random(2000)
    img = rasterize_points(pts, inten, cam, splat_radius=0)

    depth = np.zeros((64, 64))
    best = np.full((64, 64), np.inf)
    out_i = np.zeros((64, 64))
    rel = (pts - cam.pose.translation) @ cam.pose.rotation
    for k in range(pts.shape[0]):
        x, y, z = rel[k]
        if z <= 0:
            continue
        u = int(np.floor(cam.fx * x / z + cam.cx + 0.5))
        v = int(np.floor(cam.fy * y / z + cam.cy + 0.5))
        if not (0 <= u < 64 and 0 <= v < 64):
            continue
        if z < best[v, u]:
            best[v, u] = z
            depth[v, u] = z
            out_i[v, u] = inten[k]
    assert np.array_equal(img.depth, depth)
    assert np.array_equal(img.intensity, out_i)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_rasterize_order_independent(seed):
    rng = np.random.default_rng(seed)
    cam = make_camera(width=32, height=32)
    pts = np.column_stack([rng.uniform(0.5, 20, 500),
                           rng.uniform(-8, 8, 500),
                           rng.uniform(-2, 4, 500)])
    inten = rng.random(500)
    a = rasterize_points(pts, inten, cam, splat_radius=1)
    perm = rng.permutation(500)
    b = rasterize_points(pts[perm], inten[perm], cam, splat_radius=1)
    assert np.array_equal(a.depth, b.depth)
    assert np.array_equal(a.intensity, b.intensity)


def test_adding_point_never_raises_depth():
    rng = np.random.default_rng(5)
    cam = make_camera(width=16, height=16)
    pts = np.column_stack([rng.uniform(0.5, 20, 100),
                           rng.uniform(-4, 4, 100),
                           rng.uniform(-2, 2, 100)])
    inten = rng.random(100)
    base = rasterize_points(pts, inten, cam, splat_radius=0)
    extra = np.vstack([pts, [[4.0, 0.0, 0.0]]])
    more = rasterize_points(extra, np.append(inten, 0.5), cam, splat_radius=0)
    filled = base.depth > 0
    assert np.all(more.depth[filled] <= base.depth[filled])


def test_depth_invariants(tiny_bundle):
    img = render_lidar_image(tiny_bundle, 0, tiny_bundle.cameras[0])
    assert np.all(img.depth >= 0)
    assert np.all(img.intensity[img.depth == 0] == 0)


def test_condition_image_channels(tiny_bundle):
    img = render_lidar_image(tiny_bundle, 0, tiny_bundle.cameras[0])
    cond = condition_image(img)
    assert cond.shape == (64, 64, 3)
    assert cond.min() >= 0.0 and cond.max() <= 1.0
    valid = img.validity()
    assert np.array_equal(cond[:, :, 2] > 0, valid)
    # inverse depth: nearer points brighter
    d = img.depth[valid]
    c = cond[:, :, 0][valid]
    order = np.argsort(d)
    assert np.all(np.diff(c[order]) <= 1e-12)
