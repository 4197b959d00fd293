"""Sequence corpora, preprocessing and subsequence sampling."""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .autodiff import ParameterError
from .kinematics import PoseSequence, remove_global_transform, resample

POSE_SUFFIX = ".pose.csv"
LABEL_SUFFIX = ".labels.csv"


class DataError(RuntimeError):
    """Input data is missing or unusable."""


@dataclass
class Sequence:
    name: str
    action: str
    poses: PoseSequence
    labels: np.ndarray | None = None

    @property
    def num_frames(self) -> int:
        return self.poses.num_frames


@dataclass(frozen=True)
class SubsequenceSpec:
    seed: int
    count: int
    observed: int
    horizon: int


@dataclass
class Window:
    action: str
    source: str
    start: int
    observed: np.ndarray  # (t, J, 3)
    future: np.ndarray  # (h, J, 3)
    labels: np.ndarray | None = None  # (t + h,)


def preprocess(seq: PoseSequence, target_hz: float | None) -> PoseSequence:
    """Root-normalise and decimate to the working rate."""
    seq = remove_global_transform(seq)
    if target_hz is not None and seq.frame_rate_hz != target_hz:
        seq = resample(seq, target_hz)
    return seq


def drop_joints(seq: PoseSequence, excluded) -> PoseSequence:
    """Remove the named joints (e.g. ones that are constant after root removal)."""
    excluded = list(excluded)
    if not excluded:
        return seq
    names = list(seq.joint_names)
    missing = [j for j in excluded if j not in names]
    if missing:
        raise DataError(f"unknown joints to exclude: {', '.join(missing)}")
    keep = [i for i, n in enumerate(names) if n not in excluded]
    return PoseSequence(seq.positions[:, keep], seq.frame_rate_hz,
                        tuple(names[i] for i in keep), dict(seq.metadata))


def load_split(data_dir: str | os.PathLike, split: str, target_hz: float | None = 25.0,
               require_labels: bool = False, label_root: str | os.PathLike | None = None,
               exclude_joints=()) -> list[Sequence]:
    """Read ``<data_dir>/<split>/[<action>/]<name>.pose.csv`` files.

    Labels come from a sibling ``<name>.labels.csv`` or, with ``label_root``,
    from the mirrored path ``<label_root>/<split>/[<action>/]<name>.labels.csv``.
    A label file may hold one id per raw frame (decimated along with the
    poses) or one id per working-rate frame. The action is the
    sub-directory name, or ``"all"`` for top-level files.
    """
    root = Path(data_dir) / split
    if not root.is_dir():
        raise DataError(f"missing split directory {root}")
    files = sorted(root.rglob("*" + POSE_SUFFIX))
    if not files:
        raise DataError(f"no pose files under {root}")
    out = []
    for path in files:
        name = path.name[: -len(POSE_SUFFIX)]
        rel = path.parent.relative_to(root)
        action = rel.parts[0] if rel.parts else "all"
        try:
            raw = formats.read_pose_csv(path)
        except formats.FormatError as exc:
            raise DataError(str(exc)) from exc
        poses = drop_joints(preprocess(raw, target_hz), exclude_joints)
        labels = None
        if label_root is None:
            lpath = path.with_name(name + LABEL_SUFFIX)
        else:
            lpath = Path(label_root) / split / rel / (name + LABEL_SUFFIX)
        if lpath.exists():
            labels, _ = formats.read_label_csv(lpath)
            if len(labels) == raw.num_frames:
                step = int(round(raw.frame_rate_hz / poses.frame_rate_hz))
                labels = labels[::step]
            elif len(labels) != poses.num_frames:
                raise DataError(f"{lpath}: {len(labels)} labels for {raw.num_frames} frames")
        elif require_labels:
            raise DataError(f"missing labels {lpath}")
        out.append(Sequence(str(path.relative_to(root)), action, poses, labels))
    return out


def sample_subsequences(dataset: list[Sequence], spec: SubsequenceSpec,
                        lookahead: int = 0) -> list[Window]:
    """Draw ``spec.count`` windows per action, uniformly over valid starts.

    Sequences shorter than ``observed + horizon + lookahead`` are skipped
    with a warning.
    """
    need = spec.observed + spec.horizon + lookahead
    rng = np.random.default_rng(spec.seed)
    by_action: dict[str, list[Sequence]] = {}
    for seq in dataset:
        if seq.num_frames < need:
            warnings.warn(f"skipping {seq.name}: {seq.num_frames} frames < {need} required")
            continue
        by_action.setdefault(seq.action, []).append(seq)
    windows = []
    for action in sorted(by_action):
        seqs = by_action[action]
        n_starts = np.array([s.num_frames - need + 1 for s in seqs])
        offsets = np.concatenate([[0], np.cumsum(n_starts)])
        picks = rng.integers(0, offsets[-1], size=spec.count)
        for p in picks:
            i = int(np.searchsorted(offsets, p, side="right") - 1)
            start = int(p - offsets[i])
            windows.append(_cut(seqs[i], start, spec.observed, spec.horizon))
    return windows


def sliding_windows(dataset: list[Sequence], observed: int, horizon: int,
                    stride: int = 1) -> list[Window]:
    """Every window at ``stride`` spacing, in corpus order."""
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    out = []
    for seq in dataset:
        for start in range(0, seq.num_frames - observed - horizon + 1, stride):
            out.append(_cut(seq, start, observed, horizon))
    return out


def _cut(seq: Sequence, start: int, observed: int, horizon: int) -> Window:
    pos = seq.poses.positions
    end = start + observed + horizon
    labels = None if seq.labels is None else seq.labels[start:end].copy()
    return Window(seq.action, seq.name, start, pos[start:start + observed].copy(),
                  pos[start + observed:end].copy(), labels)


def stack_windows(windows: list[Window]) -> tuple[np.ndarray, np.ndarray | None]:
    """Stack windows into ``(B, T, d)`` poses and ``(B, T)`` labels."""
    poses = np.stack([np.concatenate([w.observed, w.future]) for w in windows])
    poses = poses.reshape(poses.shape[0], poses.shape[1], -1)
    if any(w.labels is None for w in windows):
        return poses, None
    return poses, np.stack([w.labels for w in windows])
