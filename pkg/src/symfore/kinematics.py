"""Skeletons, exponential-map rotations and forward kinematics."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .autodiff import DimensionError, ParameterError


@dataclass(frozen=True)
class Skeleton:
    names: tuple[str, ...]
    parents: tuple[int, ...]  # -1 marks the root
    offsets: np.ndarray  # (J, 3) in mm

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "offsets", offsets)
        J = len(self.names)
        if J < 2:
            raise ParameterError("a skeleton needs at least 2 joints")
        if len(self.parents) != J or offsets.shape != (J, 3):
            raise DimensionError("names, parents and offsets disagree on joint count")
        roots = [j for j, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise ParameterError(f"expected exactly one root, found {len(roots)}")
        for j, p in enumerate(self.parents):
            if p >= j:
                raise ParameterError(f"joint {self.names[j]!r} precedes its parent")
        if not np.all(np.isfinite(offsets)):
            raise ParameterError("non-finite bone offset")

    @property
    def num_joints(self) -> int:
        return len(self.names)

    @property
    def root(self) -> int:
        return self.parents.index(min(self.parents))

    def bone_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.offsets, axis=1)


@dataclass
class AngleSequence:
    """Per-frame exponential-map rotations, ``(T, J, 3)`` radians·axis.

    The root joint's rotation doubles as the global orientation.
    """

    rotations: np.ndarray
    translation: np.ndarray | None = None  # (T, 3) mm
    frame_rate_hz: float = 50.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.rotations.ndim != 3 or self.rotations.shape[2] != 3:
            raise DimensionError(f"rotations must be (T, J, 3), got {self.rotations.shape}")
        if self.translation is not None:
            self.translation = np.asarray(self.translation, dtype=np.float64)


@dataclass
class PoseSequence:
    """Joint positions ``(T, J, 3)`` in millimetres."""

    positions: np.ndarray
    frame_rate_hz: float = 25.0
    joint_names: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise DimensionError(f"positions must be (T, J, 3), got {self.positions.shape}")
        if self.positions.shape[0] < 1:
            raise ParameterError("a pose sequence needs at least one frame")
        if self.frame_rate_hz <= 0:
            raise ParameterError("frame rate must be positive")

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def num_joints(self) -> int:
        return self.positions.shape[1]

    def flat(self) -> np.ndarray:
        """Frames as ``(T, 3 * J)`` feature vectors."""
        return self.positions.reshape(self.num_frames, -1)


def _cross_matrix(u: np.ndarray) -> np.ndarray:
    x, y, z = u
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def expmap_to_rotation(v) -> np.ndarray:
    """Rodrigues' formula for an axis-angle 3-vector."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    if theta < 1e-8:
        # second-order series of exp([v]x)
        K = _cross_matrix(v)
        return np.eye(3) + K + 0.5 * K @ K
    K = _cross_matrix(v / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def euler_to_expmap(angles: np.ndarray, order: str = "ZYX", degrees: bool = False) -> np.ndarray:
    """Convert Euler triples to exponential maps.

    ``order`` follows scipy: upper case is intrinsic, lower case extrinsic.
    """
    angles = np.asarray(angles, dtype=np.float64)
    flat = angles.reshape(-1, 3)
    rotvec = Rotation.from_euler(order, flat, degrees=degrees).as_rotvec()
    return rotvec.reshape(angles.shape)


def forward_kinematics(skel: Skeleton, angles: AngleSequence) -> PoseSequence:
    rot = angles.rotations
    T, J, _ = rot.shape
    if J != skel.num_joints:
        raise DimensionError(f"angles have {J} joints, skeleton has {skel.num_joints}")
    positions = np.zeros((T, J, 3))
    for f in range(T):
        glob = [None] * J
        for j in range(J):
            local = expmap_to_rotation(rot[f, j])
            p = skel.parents[j]
            if p < 0:
                glob[j] = local
                if angles.translation is not None:
                    positions[f, j] = angles.translation[f]
            else:
                glob[j] = glob[p] @ local
                positions[f, j] = positions[f, p] + glob[p] @ skel.offsets[j]
    return PoseSequence(positions, frame_rate_hz=angles.frame_rate_hz,
                        joint_names=skel.names, metadata=dict(angles.metadata))


def remove_global_transform(seq, root: int = 0):
    """Strip global translation (and, for angles, global rotation)."""
    if isinstance(seq, AngleSequence):
        rot = seq.rotations.copy()
        rot[:, root] = 0.0
        trans = None if seq.translation is None else np.zeros_like(seq.translation)
        return replace(seq, rotations=rot, translation=trans)
    pos = seq.positions - seq.positions[:, root:root + 1]
    return replace(seq, positions=pos)


def resample(seq: PoseSequence, target_hz: float) -> PoseSequence:
    """Decimate to ``target_hz``; the source rate must be an integer multiple."""
    ratio = seq.frame_rate_hz / target_hz
    step = int(round(ratio))
    if target_hz <= 0 or step < 1 or abs(ratio - step) > 1e-9:
        raise ParameterError(f"cannot decimate {seq.frame_rate_hz} Hz to {target_hz} Hz")
    return replace(seq, positions=seq.positions[::step].copy(), frame_rate_hz=float(target_hz))


def ms_to_frames(ms: float, hz: float) -> int:
    """Number of frames covering ``ms`` milliseconds at ``hz``."""
    return int(round(ms * hz / 1000.0))
