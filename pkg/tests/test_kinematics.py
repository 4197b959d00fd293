import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from symfore.autodiff import DimensionError, ParameterError
from symfore.kinematics import (AngleSequence, PoseSequence, Skeleton, euler_to_expmap,
                                expmap_to_rotation, forward_kinematics, ms_to_frames,
                                remove_global_transform, resample)
from symfore.synth import toy_skeleton

finite3 = arrays(np.float64, 3, elements=st.floats(-10, 10))


def test_expmap_zero_is_identity():
    np.testing.assert_array_equal(expmap_to_rotation(np.zeros(3)), np.eye(3))


def test_expmap_quarter_turn_about_z():
    R = expmap_to_rotation([0.0, 0.0, np.pi / 2])
    np.testing.assert_allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-9)


def test_expmap_small_angle_series():
    v = np.array([1e-10, -2e-10, 3e-10])
    R = expmap_to_rotation(v)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(R, np.eye(3) + np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]],
                                                       [-v[1], v[0], 0]]), atol=1e-18)


@settings(max_examples=200, deadline=None)
@given(finite3)
def test_expmap_orthonormal_and_angle(v):
    R = expmap_to_rotation(v)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1.0) <= 1e-9
    theta = np.linalg.norm(v) % (2 * np.pi)
    want = min(theta, 2 * np.pi - theta)
    got = np.arccos(np.clip((np.trace(R) - 1) / 2, -1, 1))
    # arccos loses precision near 0 and pi
    assert abs(got - want) <= 1e-6


def test_euler_matches_composed_axes():
    ang = np.array([[30.0, -20.0, 45.0]])
    v = euler_to_expmap(ang, "ZYX", degrees=True)
    rz, ry, rx = np.deg2rad(ang[0])
    Rz = expmap_to_rotation([0, 0, rz])
    Ry = expmap_to_rotation([0, ry, 0])
    Rx = expmap_to_rotation([rx, 0, 0])
    np.testing.assert_allclose(expmap_to_rotation(v[0]), Rz @ Ry @ Rx, atol=1e-12)


def two_link() -> Skeleton:
    return Skeleton(("root", "mid", "tip"), (-1, 0, 1),
                    np.array([[0.0, 0, 0], [0, 100, 0], [0, 100, 0]]))


def test_skeleton_validation():
    with pytest.raises(ParameterError):
        Skeleton(("a",), (-1,), np.zeros((1, 3)))
    with pytest.raises(ParameterError):
        Skeleton(("a", "b"), (-1, -1), np.zeros((2, 3)))
    with pytest.raises(ParameterError):
        Skeleton(("a", "b", "c"), (-1, 2, 0), np.zeros((3, 3)))
    with pytest.raises(ParameterError):
        Skeleton(("a", "b"), (-1, 0), np.array([[0, 0, 0], [np.nan, 0, 0]]))


def test_fk_rest_pose_is_cumulative_offsets():
    pose = forward_kinematics(two_link(), AngleSequence(np.zeros((2, 3, 3)))).positions
    np.testing.assert_array_equal(pose[0], [[0, 0, 0], [0, 100, 0], [0, 200, 0]])


def test_fk_two_link_root_quarter_turn():
    rot = np.zeros((1, 3, 3))
    rot[0, 0] = [0, 0, np.pi / 2]
    pose = forward_kinematics(two_link(), AngleSequence(rot)).positions[0]
    np.testing.assert_allclose(pose[1], [-100, 0, 0], atol=1e-9)
    np.testing.assert_allclose(pose[2], [-200, 0, 0], atol=1e-9)


def test_fk_joint_count_mismatch():
    with pytest.raises(DimensionError):
        forward_kinematics(two_link(), AngleSequence(np.zeros((1, 4, 3))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fk_preserves_bone_lengths(seed):
    skel = toy_skeleton(9)
    rot = np.random.default_rng(seed).normal(scale=2.0, size=(6, 9, 3))
    pos = forward_kinematics(skel, AngleSequence(rot)).positions
    child = np.arange(1, 9)
    parent = np.array(skel.parents[1:])
    lengths = np.linalg.norm(pos[:, child] - pos[:, parent], axis=-1)
    np.testing.assert_allclose(lengths, np.broadcast_to(skel.bone_lengths()[1:], lengths.shape),
                               rtol=0, atol=1e-9)


def _poses(seed=0, T=20, J=4, hz=50.0):
    return PoseSequence(np.random.default_rng(seed).normal(scale=100, size=(T, J, 3)), hz)


def test_remove_global_transform_properties():
    p = _poses()
    q = remove_global_transform(p)
    np.testing.assert_array_equal(q.positions[:, 0], 0.0)
    np.testing.assert_array_equal(remove_global_transform(q).positions, q.positions)
    shifted = PoseSequence(p.positions + 5.0, p.frame_rate_hz)
    np.testing.assert_allclose(remove_global_transform(shifted).positions, q.positions, atol=1e-12)
    d_before = np.linalg.norm(p.positions[:, 1] - p.positions[:, 2], axis=-1)
    d_after = np.linalg.norm(q.positions[:, 1] - q.positions[:, 2], axis=-1)
    np.testing.assert_allclose(d_after, d_before, rtol=1e-12)


def test_remove_global_transform_on_angles():
    a = AngleSequence(np.ones((3, 2, 3)), translation=np.ones((3, 3)))
    b = remove_global_transform(a)
    np.testing.assert_array_equal(b.rotations[:, 0], 0.0)
    np.testing.assert_array_equal(b.translation, 0.0)
    np.testing.assert_array_equal(b.rotations[:, 1], 1.0)


def test_resample():
    p = _poses(T=100)
    q = resample(p, 25)
    assert q.num_frames == 50 and q.frame_rate_hz == 25
    np.testing.assert_array_equal(q.positions, p.positions[::2])
    np.testing.assert_array_equal(resample(p, 50).positions, p.positions)
    with pytest.raises(ParameterError):
        resample(p, 30)


def test_resample_commutes_with_root_removal():
    p = _poses(T=40)
    a = resample(remove_global_transform(p), 25).positions
    b = remove_global_transform(resample(p, 25)).positions
    np.testing.assert_array_equal(a, b)


def test_ms_to_frames():
    assert ms_to_frames(80, 25) == 2
    assert ms_to_frames(1000, 25) == 25
    assert [ms_to_frames(m, 25) for m in (160, 320, 400, 560)] == [4, 8, 10, 14]
