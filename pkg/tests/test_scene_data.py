"""Bundle ingestion, synchronization, and point partitioning."""

import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarpaint.errors import FormatError, ValidationError
from lidarpaint.geometry import Pose
from lidarpaint.scene_data import (BoundingBox, Camera, LidarFrame, load_bundle,
                                   read_lidar_bin, split_points, write_bundle,
                                   write_lidar_bin)

from conftest import make_camera, random_rotation


def _write_minimal(path, n_frames=1, lidar_ts=None, boxes=(), actor_count=0,
                   tol=0.05):
    cams = []
    for i in range(n_frames):
        c = make_camera(width=8, height=8)
        cams.append(Camera(c.pose, c.fx, c.fy, c.cx, c.cy, c.width, c.height,
                           timestamp=0.1 * i))
    frames = []
    for i in range(n_frames):
        pts = np.array([[5.0, 0.0, 0.0], [6.0, 1.0, 0.5]]) + i
        frames.append((pts, np.array([0.2, 0.8])))
    images = [np.full((8, 8, 3), 0.5) for _ in range(n_frames)]
    write_bundle(path, cams, frames, list(boxes), images, actor_count, tol,
                 lidar_timestamps=lidar_ts)
    return cams


def test_minimal_bundle_loads(tmp_path):
    path = str(tmp_path / "b")
    _write_minimal(path)
    bundle = load_bundle(path)
    assert bundle.frame_count == 1
    assert bundle.actor_count == 0
    assert bundle.lidar[0].points.shape == (2, 3)


def test_unsynchronized_lidar_dropped(tmp_path):
    path = str(tmp_path / "b")
    _write_minimal(path, n_frames=3, lidar_ts=[0.0, 0.1, 0.30])
    bundle = load_bundle(path)
    # cameras at 0.0/0.1/0.2 s; the 0.30 s sweep is beyond the 0.05 s tolerance
    assert bundle.lidar[0].points.shape[0] == 2
    assert bundle.lidar[1].points.shape[0] == 2
    assert bundle.lidar[2].points.shape[0] == 0


def test_exact_timestamp_match_never_dropped(tmp_path):
    path = str(tmp_path / "b")
    _write_minimal(path, n_frames=3, lidar_ts=[0.0, 0.1, 0.2], tol=0.0)
    bundle = load_bundle(path)
    assert all(f.points.shape[0] == 2 for f in bundle.lidar)


def test_box_frame_out_of_range_rejected(tmp_path):
    path = str(tmp_path / "b")
    box = BoundingBox(Pose(np.eye(3), np.zeros(3)), np.ones(3), actor_id=0,
                      frame_index=1)
    _write_minimal(path, n_frames=1, boxes=[box], actor_count=1)
    with pytest.raises(ValidationError):
        load_bundle(path)


def test_malformed_meta_names_file(tmp_path):
    path = str(tmp_path / "b")
    _write_minimal(path)
    with open(os.path.join(path, "meta.json"), "w") as f:
        f.write("{not json")
    with pytest.raises(FormatError) as err:
        load_bundle(path)
    assert "meta.json" in str(err.value)


def test_missing_required_field_is_format_error(tmp_path):
    path = str(tmp_path / "b")
    _write_minimal(path)
    meta = json.load(open(os.path.join(path, "meta.json")))
    del meta["actor_count"]
    json.dump(meta, open(os.path.join(path, "meta.json"), "w"))
    with pytest.raises(FormatError):
        load_bundle(path)


def test_camera_validation():
    with pytest.raises(ValidationError):
        Camera(Pose(np.eye(3), np.zeros(3)), fx=-1.0, fy=1.0, cx=0, cy=0,
               width=4, height=4)
    with pytest.raises(ValidationError):
        Camera(Pose(np.eye(3), np.zeros(3)), fx=1.0, fy=1.0, cx=4.0, cy=0,
               width=4, height=4)


def test_box_validation():
    with pytest.raises(ValidationError):
        BoundingBox(Pose(np.eye(3), np.zeros(3)), np.array([1.0, 0.0, 1.0]),
                    actor_id=0, frame_index=0)


def test_camera_shift_moves_along_right_axis():
    cam = make_camera()
    moved = cam.shifted(2.0, 0.0)
    delta = moved.pose.translation - cam.pose.translation
    assert np.allclose(delta, 2.0 * cam.pose.rotation[:, 0], atol=1e-12)
    up = cam.shifted(0.0, 1.5)
    delta = up.pose.translation - cam.pose.translation
    assert np.allclose(delta, -1.5 * cam.pose.rotation[:, 1], atol=1e-12)


def test_lidar_bin_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.normal(0, 10, (37, 3))
    inten = rng.random(37)
    p = str(tmp_path / "x.bin")
    write_lidar_bin(p, pts, inten)
    back_pts, back_inten = read_lidar_bin(p)
    assert np.array_equal(back_pts, pts.astype(np.float32).astype(np.float64))
    assert np.array_equal(back_inten, inten.astype(np.float32).astype(np.float64))


def test_lidar_bin_truncation_is_format_error(tmp_path):
    p = str(tmp_path / "x.bin")
    write_lidar_bin(p, np.ones((3, 3)), np.ones(3))
    data = open(p, "rb").read()
    open(p, "wb").write(data[:-2])
    with pytest.raises(FormatError):
        read_lidar_bin(p)


# --- split_points -----------------------------------------------------------

def _bundle_with_boxes(pts, boxes, actor_count):
    cam = make_camera()
    frame = LidarFrame(0, 0.0, pts, np.linspace(0, 1, pts.shape[0]))
    from lidarpaint.scene_data import SceneBundle
    return SceneBundle(cameras=[cam], lidar=[frame], boxes=list(boxes),
                       image_paths=["unused.ppm"], frame_count=1,
                       actor_count=actor_count, sync_tolerance_s=0.05)


def test_split_point_at_box_center():
    box = BoundingBox(Pose(np.eye(3), np.array([3.0, 1.0, 0.0])),
                      np.array([1.0, 1.0, 1.0]), actor_id=0, frame_index=0)
    pts = np.array([[3.0, 1.0, 0.0], [50.0, 0.0, 0.0]])
    bundle = _bundle_with_boxes(pts, [box], actor_count=1)
    bg, bg_i, actors, actor_i = split_points(bundle, 0)
    assert np.allclose(actors[0], [[0.0, 0.0, 0.0]])
    assert np.allclose(bg, [[50.0, 0.0, 0.0]])


def test_split_tie_goes_to_lowest_actor_id():
    pose = Pose(np.eye(3), np.zeros(3))
    b0 = BoundingBox(pose, np.ones(3), actor_id=0, frame_index=0)
    b1 = BoundingBox(pose, np.ones(3), actor_id=1, frame_index=0)
    pts = np.array([[0.1, 0.0, 0.0]])
    bundle = _bundle_with_boxes(pts, [b1, b0], actor_count=2)
    _, _, actors, _ = split_points(bundle, 0)
    assert actors[0].shape[0] == 1
    assert actors[1].shape[0] == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_split_is_partition_matching_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-10, 10, (200, 3))
    boxes = []
    for a in range(3):
        pose = Pose(random_rotation(rng), rng.uniform(-6, 6, 3))
        boxes.append(BoundingBox(pose, rng.uniform(0.5, 3.0, 3), actor_id=a,
                                 frame_index=0))
    bundle = _bundle_with_boxes(pts, boxes, actor_count=3)
    bg, bg_i, actors, actor_i = split_points(bundle, 0)

    total = bg.shape[0] + sum(a.shape[0] for a in actors)
    assert total == pts.shape[0]

    # brute-force membership: lowest actor_id whose box contains the point
    count_per_actor = [0, 0, 0]
    n_bg = 0
    for p in pts:
        owner = None
        for box in boxes:
            local = box.pose.rotation.T @ (p - box.pose.translation)
            if np.all(np.abs(local) <= box.half_extents):
                owner = box.actor_id
                break
        if owner is None:
            n_bg += 1
        else:
            count_per_actor[owner] += 1
    assert n_bg == bg.shape[0]
    assert count_per_actor == [a.shape[0] for a in actors]
    # actor points are box-local: mapping back must land inside the box
    for box, cloud in zip(boxes, actors):
        if cloud.size:
            assert np.all(np.abs(cloud) <= box.half_extents + 1e-9)


def test_bundle_fixture_is_valid(tiny_bundle):
    tiny_bundle.validate()
    assert tiny_bundle.frame_count == 3
    assert tiny_bundle.actor_count == 1
