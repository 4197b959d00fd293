"""Plain-text file formats: pose CSV, label CSV, angle CSV and skeleton files.

Pose CSV::

    # symfore-pose v1; hz=25; joints=hip,knee,ankle
    0.0,0.0,0.0,12.5,-400.0,3.0,...

Floats are written with ``repr`` so a read/write round-trip is bit-exact.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .kinematics import AngleSequence, PoseSequence, Skeleton, euler_to_expmap


class FormatError(ValueError):
    """A data file is malformed."""


def _parse_header(line: str, magic: str) -> dict[str, str]:
    if not line.startswith("#"):
        raise FormatError(f"missing '{magic}' header")
    parts = [p.strip() for p in line[1:].split(";")]
    if parts[0] != magic:
        raise FormatError(f"expected header '{magic}', got '{parts[0]}'")
    fields = {}
    for part in parts[1:]:
        if not part:
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise FormatError(f"bad header field {part!r}")
        fields[key.strip()] = value.strip()
    return fields


def _format_row(row) -> str:
    return ",".join(repr(float(v)) for v in row)


def _read_rows(lines: list[str], width: int, path) -> np.ndarray:
    rows = []
    for n, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        vals = line.split(",")
        if len(vals) != width:
            raise FormatError(f"{path}:{n}: expected {width} columns, got {len(vals)}")
        try:
            rows.append([float(v) for v in vals])
        except ValueError as exc:
            raise FormatError(f"{path}:{n}: {exc}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, width)


def write_pose_csv(path: str | os.PathLike, seq: PoseSequence) -> None:
    names = seq.joint_names or tuple(f"j{i}" for i in range(seq.num_joints))
    lines = [f"# symfore-pose v1; hz={seq.frame_rate_hz!r}; joints={','.join(names)}"]
    lines.extend(_format_row(r) for r in seq.flat())
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_csv(path: str | os.PathLike) -> PoseSequence:
    text = Path(path).read_text().split("\n")
    fields = _parse_header(text[0], "symfore-pose v1")
    try:
        hz = float(fields["hz"])
        names = tuple(fields["joints"].split(","))
    except KeyError as exc:
        raise FormatError(f"{path}: header lacks {exc}") from None
    flat = _read_rows(text[1:], 3 * len(names), path)
    if flat.shape[0] == 0:
        raise FormatError(f"{path}: no frames")
    return PoseSequence(flat.reshape(len(flat), len(names), 3), frame_rate_hz=hz,
                        joint_names=names, metadata={"source": str(path)})


def write_label_csv(path: str | os.PathLike, labels, class_names=None) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    header = "# symfore-labels v1"
    if class_names:
        header += f"; classes={','.join(class_names)}"
    Path(path).write_text("\n".join([header, *map(str, labels.tolist())]) + "\n")


def read_label_csv(path: str | os.PathLike) -> tuple[np.ndarray, tuple[str, ...]]:
    text = Path(path).read_text().split("\n")
    fields = _parse_header(text[0], "symfore-labels v1")
    names = tuple(fields["classes"].split(",")) if fields.get("classes") else ()
    try:
        labels = np.array([int(v) for v in text[1:] if v.strip()], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if names and labels.size and (labels.min() < 0 or labels.max() >= len(names)):
        raise FormatError(f"{path}: class id outside the {len(names)}-class table")
    return labels, names


def write_skeleton(path: str | os.PathLike, skel: Skeleton) -> None:
    lines = []
    for name, parent, off in zip(skel.names, skel.parents, skel.offsets):
        pname = "-" if parent < 0 else skel.names[parent]
        lines.append(f"{name} {pname} " + " ".join(repr(float(v)) for v in off))
    Path(path).write_text("\n".join(lines) + "\n")


def read_skeleton(path: str | os.PathLike) -> Skeleton:
    """One joint per line: ``<name> <parent|-> <ox> <oy> <oz>``."""
    names, parents, offsets = [], [], []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"{path}:{n}: expected 5 fields")
        name, parent = parts[0], parts[1]
        if parent == "-":
            parents.append(-1)
        elif parent in names:
            parents.append(names.index(parent))
        else:
            raise FormatError(f"{path}:{n}: parent {parent!r} not defined before {name!r}")
        names.append(name)
        try:
            offsets.append([float(v) for v in parts[2:]])
        except ValueError:
            raise FormatError(f"{path}:{n}: non-numeric offset") from None
    return Skeleton(tuple(names), tuple(parents), np.array(offsets))


def read_angle_csv(path: str | os.PathLike) -> AngleSequence:
    """Rotational motion file.

    Header ``# symfore-angles v1; hz=50; joints=a,b,...; repr=expmap`` with
    optional ``repr=euler; order=ZYX; unit=deg``. Rows hold a 3-value root
    translation followed by 3 rotation values per joint.
    """
    text = Path(path).read_text().split("\n")
    fields = _parse_header(text[0], "symfore-angles v1")
    names = tuple(fields["joints"].split(","))
    flat = _read_rows(text[1:], 3 + 3 * len(names), path)
    rot = flat[:, 3:].reshape(len(flat), len(names), 3)
    kind = fields.get("repr", "expmap")
    if kind == "euler":
        order = fields.get("order", "ZYX")
        rot = euler_to_expmap(rot, order, degrees=fields.get("unit", "rad") == "deg")
    elif kind != "expmap":
        raise FormatError(f"{path}: unknown rotation representation {kind!r}")
    return AngleSequence(rot, translation=flat[:, :3], frame_rate_hz=float(fields["hz"]),
                         metadata={"source": str(path), "joints": names})


def write_angle_csv(path: str | os.PathLike, seq: AngleSequence, joint_names) -> None:
    T = seq.rotations.shape[0]
    trans = seq.translation if seq.translation is not None else np.zeros((T, 3))
    lines = [f"# symfore-angles v1; hz={seq.frame_rate_hz!r}; joints={','.join(joint_names)}; repr=expmap"]
    lines.extend(_format_row(np.concatenate([trans[f], seq.rotations[f].ravel()])) for f in range(T))
    Path(path).write_text("\n".join(lines) + "\n")
