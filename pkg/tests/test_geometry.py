"""Pose and quaternion algebra."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarpaint.geometry import (Pose, matrix_to_quat, quat_left_matrix,
                                 quat_multiply, quat_normalize, quat_to_matrix)

from conftest import random_rotation


unit_quats = st.builds(
    lambda v: v / np.linalg.norm(v),
    st.lists(st.floats(-1, 1), min_size=4, max_size=4)
    .map(np.array).filter(lambda v: np.linalg.norm(v) > 1e-3))

points = st.lists(st.floats(-100, 100), min_size=3, max_size=3).map(np.array)


@given(unit_quats)
def test_quat_to_matrix_is_rotation(q):
    m = quat_to_matrix(q)
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-9)
    assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-9)


@given(unit_quats)
def test_quat_matrix_round_trip(q):
    back = matrix_to_quat(quat_to_matrix(q))
    # q and -q encode the same rotation
    sign = np.sign(np.dot(back, q)) or 1.0
    assert np.allclose(back * sign, q, atol=1e-9)


@given(unit_quats, unit_quats)
def test_quat_multiply_matches_matrix_product(a, b):
    assert np.allclose(quat_to_matrix(quat_multiply(a, b)),
                       quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-9)


@given(unit_quats, unit_quats)
def test_quat_left_matrix_is_left_product(a, b):
    assert np.allclose(quat_left_matrix(a) @ b, quat_multiply(a, b), atol=1e-12)


def test_quat_normalize_zero_rejected():
    with pytest.raises(ValueError):
        quat_normalize(np.zeros(4))


@settings(max_examples=50)
@given(points, st.integers(0, 10_000))
def test_pose_round_trip(p, seed):
    rng = np.random.default_rng(seed)
    pose = Pose(random_rotation(rng), rng.normal(0, 10, 3))
    assert np.allclose(pose.inverse().apply(pose.apply(p)), p, atol=1e-9)


def test_pose_compose_inverse_is_identity():
    rng = np.random.default_rng(3)
    pose = Pose(random_rotation(rng), rng.normal(0, 10, 3))
    ident = pose.compose(pose.inverse())
    assert np.allclose(ident.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(ident.translation, 0.0, atol=1e-9)


def test_pose_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 2.0, np.zeros(3))


def test_pose_rejects_reflection():
    m = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        Pose(m, np.zeros(3))


def test_pose_apply_batch_matches_loop():
    rng = np.random.default_rng(11)
    pose = Pose(random_rotation(rng), rng.normal(0, 5, 3))
    pts = rng.normal(0, 10, (17, 3))
    batch = pose.apply(pts)
    for i in range(pts.shape[0]):
        assert np.allclose(batch[i], pose.rotation @ pts[i] + pose.translation,
                           atol=1e-12)
