"""Parametric toy motions with known labels, a stand-in for mocap corpora.

Label 0 is the periodic "sine-walk", label 1 the "still" pose. A "switch"
sequence walks, decelerates over ``lead`` frames, eases into the still
pose over the final ``blend`` of them and stays still from ``switch_frame``
on.
"""
from __future__ import annotations

import numpy as np

from .autodiff import ParameterError
from .dataset import Sequence
from .kinematics import AngleSequence, PoseSequence, Skeleton, forward_kinematics

CLASS_NAMES = ("sine-walk", "still")

_LIMB_DIRS = np.array([
    [-1.0, -4.0, 0.0],  # left leg
    [1.0, -4.0, 0.0],  # right leg
    [-2.0, 3.0, 0.0],  # left arm
    [2.0, 3.0, 0.0],  # right arm
])


def toy_skeleton(J: int, bone_mm: float = 200.0) -> Skeleton:
    """Root plus four limbs grown round-robin, ``J >= 2`` joints."""
    if J < 2:
        raise ParameterError("need at least 2 joints")
    names = ["root"]
    parents = [-1]
    offsets = [[0.0, 0.0, 0.0]]
    for j in range(1, J):
        limb = (j - 1) % 4
        parent = j - 4 if j - 4 >= 1 else 0
        d = _LIMB_DIRS[limb] / np.linalg.norm(_LIMB_DIRS[limb])
        names.append(f"limb{limb}_{(j - 1) // 4}")
        parents.append(parent)
        offsets.append(list(bone_mm * d))
    return Skeleton(tuple(names), tuple(parents), np.array(offsets))


def _walk_angles(T: int, J: int, period: float, amplitude: float, phase: float) -> np.ndarray:
    tau = np.arange(T)
    rot = np.zeros((T, J, 3))
    # torso twist keeps even a two-joint skeleton moving
    rot[:, 0, 1] = 0.5 * amplitude * np.sin(2 * np.pi * tau / period + phase)
    for j in range(1, J):
        limb = (j - 1) % 4
        # opposite limbs swing in anti-phase
        offset = np.pi * (limb % 2) + 0.5 * ((j - 1) // 4)
        rot[:, j, 0] = amplitude * np.sin(2 * np.pi * tau / period + phase + offset)
    return rot


def _still_angles(J: int) -> np.ndarray:
    rot = np.zeros((J, 3))
    rot[0, 1] = 0.8
    for j in range(1, J):
        rot[j, 0] = 1.1 if (j - 1) % 4 < 2 else -0.9
        rot[j, 2] = 0.4 * (-1) ** j
    return rot


def synth_generate(kind: str, T: int, J: int, seed: int, *, period: float = 16.0,
                   amplitude: float = 0.5, noise: float = 0.0, switch_frame: int | None = None,
                   lead: int = 20, blend: int = 6, hz: float = 25.0) -> tuple[PoseSequence, np.ndarray]:
    """Generate ``(poses, labels)`` for ``kind`` in {sine-walk, still, switch}.

    ``noise`` is the standard deviation in mm of Gaussian jitter added to
    the still segment.
    """
    if T < 1:
        raise ParameterError("T must be >= 1")
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi)
    skel = toy_skeleton(J)
    walk = _walk_angles(T, J, period, amplitude, phase)
    still = np.broadcast_to(_still_angles(J), (T, J, 3))
    tau = np.arange(T)
    if kind == "sine-walk":
        rot, labels, still_mask = walk, np.zeros(T, np.int64), np.zeros(T, bool)
    elif kind == "still":
        rot, labels, still_mask = still.copy(), np.ones(T, np.int64), np.ones(T, bool)
    elif kind == "switch":
        if T < 2:
            raise ParameterError("a switch sequence needs T >= 2")
        s = int(rng.integers(max(1, T // 4), max(2, 3 * T // 4))) if switch_frame is None else int(switch_frame)
        if not 1 <= s < T:
            raise ParameterError(f"switch_frame must lie in [1, {T - 1}]")
        # swing amplitude fades over `lead` frames, pose eases over `blend`
        envelope = np.clip((s - tau) / max(lead, 1), 0.0, 1.0)[:, None, None]
        u = np.clip(1.0 - (s - tau) / max(blend, 1), 0.0, 1.0)
        beta = (u * u * (3 - 2 * u))[:, None, None]
        rot = (1 - beta) * envelope * walk + beta * still
        labels = (tau >= s).astype(np.int64)
        still_mask = tau >= s
    else:
        raise ParameterError(f"unknown motion kind {kind!r}")
    pose = forward_kinematics(skel, AngleSequence(rot, frame_rate_hz=hz)).positions
    if noise > 0:
        jitter = rng.normal(scale=noise, size=pose.shape)
        jitter[:, 0] = 0.0
        pose = pose + jitter * still_mask[:, None, None]
    meta = {"kind": kind, "seed": seed, "period": period}
    return PoseSequence(pose, frame_rate_hz=hz, joint_names=skel.names, metadata=meta), labels


def synth_corpus(kind: str, n: int, T: int, J: int, seed: int, **kw) -> list[Sequence]:
    out = []
    for i in range(n):
        poses, labels = synth_generate(kind, T, J, seed * 1000 + i, **kw)
        out.append(Sequence(f"{kind}_{i:03d}", kind, poses, labels))
    return out
