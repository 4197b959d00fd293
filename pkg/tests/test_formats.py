import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from symfore import formats
from symfore.kinematics import AngleSequence, PoseSequence, forward_kinematics
from symfore.synth import toy_skeleton


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4), st.just(3)),
              elements=st.floats(-1e6, 1e6)),
       st.sampled_from([25.0, 50.0, 12.5]))
def test_pose_csv_round_trip_is_bit_exact(tmp_path_factory, pos, hz):
    path = tmp_path_factory.mktemp("p") / "x.pose.csv"
    names = tuple(f"j{i}" for i in range(pos.shape[1]))
    formats.write_pose_csv(path, PoseSequence(pos, hz, names))
    back = formats.read_pose_csv(path)
    assert back.positions.tobytes() == pos.tobytes()
    assert back.frame_rate_hz == hz and back.joint_names == names
    # writing what was read reproduces the file byte for byte
    path2 = path.with_name("y.pose.csv")
    formats.write_pose_csv(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_pose_csv_header(tmp_path):
    formats.write_pose_csv(tmp_path / "a.pose.csv", PoseSequence(np.zeros((1, 2, 3)), 25.0, ("a", "b")))
    head = (tmp_path / "a.pose.csv").read_text().splitlines()[0]
    assert head == "# symfore-pose v1; hz=25.0; joints=a,b"


@pytest.mark.parametrize("text", [
    "0,0,0\n",
    "# symfore-pose v1; hz=25; joints=a\n0,0\n",
    "# symfore-pose v1; hz=25; joints=a\n0,x,0\n",
    "# symfore-labels v1\n1\n",
])
def test_pose_csv_rejects_malformed(tmp_path, text):
    p = tmp_path / "bad.pose.csv"
    p.write_text(text)
    with pytest.raises(formats.FormatError):
        formats.read_pose_csv(p)


def test_label_csv_round_trip(tmp_path):
    labels = np.array([0, 0, 1, 2, 1])
    formats.write_label_csv(tmp_path / "l.csv", labels, ("walk", "sit", "eat"))
    back, names = formats.read_label_csv(tmp_path / "l.csv")
    np.testing.assert_array_equal(back, labels)
    assert names == ("walk", "sit", "eat")
    formats.write_label_csv(tmp_path / "bad.csv", [0, 3], ("a", "b"))
    with pytest.raises(formats.FormatError):
        formats.read_label_csv(tmp_path / "bad.csv")


def test_skeleton_round_trip(tmp_path):
    skel = toy_skeleton(7)
    formats.write_skeleton(tmp_path / "s.txt", skel)
    back = formats.read_skeleton(tmp_path / "s.txt")
    assert back.names == skel.names and back.parents == skel.parents
    assert back.offsets.tobytes() == skel.offsets.tobytes()


def test_skeleton_rejects_forward_parent(tmp_path):
    (tmp_path / "s.txt").write_text("a - 0 0 0\nb c 0 1 0\nc a 0 1 0\n")
    with pytest.raises(formats.FormatError):
        formats.read_skeleton(tmp_path / "s.txt")


def test_angle_csv_expmap_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    seq = AngleSequence(rng.normal(size=(4, 3, 3)), translation=rng.normal(size=(4, 3)),
                        frame_rate_hz=50.0)
    formats.write_angle_csv(tmp_path / "a.csv", seq, ("r", "a", "b"))
    back = formats.read_angle_csv(tmp_path / "a.csv")
    assert back.rotations.tobytes() == seq.rotations.tobytes()
    assert back.translation.tobytes() == seq.translation.tobytes()
    assert back.frame_rate_hz == 50.0


def test_angle_csv_euler_header(tmp_path):
    skel = toy_skeleton(3)
    p = tmp_path / "e.csv"
    p.write_text("# symfore-angles v1; hz=25; joints=root,j1,j2; repr=euler; order=ZYX; unit=deg\n"
                 "0,0,0,90,0,0,0,0,0,0,0,0\n")
    ang = formats.read_angle_csv(p)
    np.testing.assert_allclose(ang.rotations[0, 0], [0, 0, np.pi / 2], atol=1e-12)
    pose = forward_kinematics(skel, ang).positions[0]
    Rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    np.testing.assert_allclose(pose[1], Rz @ skel.offsets[1], atol=1e-9)
