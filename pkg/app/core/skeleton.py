"""Skeleton definitions and their text format.

A skeleton file is UTF-8 text made of ``key: value`` lines followed by a
``bone_prior:`` block holding K rows of K numbers (millimeters)::

    # comments and blank lines are ignored
    joint_count: 3
    joint_names: head_top neck pelvis
    head_top_index: 0
    mid_hip_index: 2
    tree_parents: 1 2 -1
    center_definition: 2 2
    bone_prior:
      0 250 750
      250 0 500
      750 500 0

Keys may appear in any order; every key is required exactly once.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.shared.contracts import SkeletonConfig
from app.shared.errors import SkeletonError

DEFAULT_JOINT_NAMES = (
    "head_top",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "pelvis",
)

DEFAULT_PARENTS = (1, 14, 1, 2, 3, 1, 5, 6, 14, 8, 9, 14, 11, 12, -1)

# Standing rest pose in millimeters, x to the subject's left, y down.
REST_POSE_MM = np.array(
    [
        [0.0, -750.0, 0.0],
        [0.0, -500.0, 0.0],
        [-180.0, -490.0, 0.0],
        [-200.0, -210.0, 0.0],
        [-210.0, 40.0, 0.0],
        [180.0, -490.0, 0.0],
        [200.0, -210.0, 0.0],
        [210.0, 40.0, 0.0],
        [-110.0, 0.0, 0.0],
        [-110.0, 420.0, 0.0],
        [-110.0, 830.0, 0.0],
        [110.0, 0.0, 0.0],
        [110.0, 420.0, 0.0],
        [110.0, 830.0, 0.0],
        [0.0, 0.0, 0.0],
    ]
)

_SCALAR_KEYS = ("joint_count", "head_top_index", "mid_hip_index")
_LIST_KEYS = ("joint_names", "tree_parents", "center_definition")
_ALL_KEYS = (*_SCALAR_KEYS, *_LIST_KEYS, "bone_prior")


def pairwise_lengths(pose_mm: np.ndarray) -> list[list[float]]:
    diffs = pose_mm[:, None, :] - pose_mm[None, :, :]
    lengths = np.round(np.linalg.norm(diffs, axis=-1), 1)
    return [[float(v) for v in row] for row in lengths]


def default_skeleton() -> SkeletonConfig:
    return SkeletonConfig(
        joint_count=len(DEFAULT_JOINT_NAMES),
        joint_names=list(DEFAULT_JOINT_NAMES),
        bone_prior=pairwise_lengths(REST_POSE_MM),
        head_top_index=0,
        mid_hip_index=14,
        tree_parents=list(DEFAULT_PARENTS),
        center_definition=(11, 8),
    )


def rest_pose_for(skeleton: SkeletonConfig) -> np.ndarray | None:
    if tuple(skeleton.joint_names) == DEFAULT_JOINT_NAMES:
        return REST_POSE_MM.copy()
    return None


def _format_number(value: float) -> str:
    return repr(float(value)) if value != int(value) else str(int(value))


def format_skeleton(skeleton: SkeletonConfig) -> str:
    lines = [
        f"joint_count: {skeleton.joint_count}",
        f"joint_names: {' '.join(skeleton.joint_names)}",
        f"head_top_index: {skeleton.head_top_index}",
        f"mid_hip_index: {skeleton.mid_hip_index}",
        f"tree_parents: {' '.join(str(p) for p in skeleton.tree_parents)}",
        f"center_definition: {skeleton.center_definition[0]} {skeleton.center_definition[1]}",
        "bone_prior:",
    ]
    for row in skeleton.bone_prior:
        lines.append("  " + " ".join(_format_number(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_skeleton(text: str) -> SkeletonConfig:
    fields: dict[str, object] = {}
    rows: list[list[float]] | None = None
    expected_rows = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if rows is not None and len(rows) < expected_rows and ":" not in line:
            try:
                rows.append([float(token) for token in line.split()])
            except ValueError as exc:
                raise SkeletonError(f"line {lineno}: bad bone_prior row: {exc}") from exc
            continue

        key, sep, value = line.partition(":")
        key = key.strip()
        if not sep or key not in _ALL_KEYS:
            raise SkeletonError(f"line {lineno}: unknown entry {line!r}")
        if key in fields or (key == "bone_prior" and rows is not None):
            raise SkeletonError(f"line {lineno}: duplicate key {key}")
        value = value.strip()
        try:
            if key in _SCALAR_KEYS:
                fields[key] = int(value)
            elif key == "joint_names":
                fields[key] = value.split()
            elif key in _LIST_KEYS:
                fields[key] = [int(token) for token in value.split()]
            else:
                if value:
                    raise SkeletonError(f"line {lineno}: bone_prior rows start on the next line")
                if "joint_count" not in fields:
                    raise SkeletonError(f"line {lineno}: joint_count must precede bone_prior")
                rows = []
                expected_rows = int(fields["joint_count"])  # type: ignore[arg-type]
        except ValueError as exc:
            raise SkeletonError(f"line {lineno}: bad value for {key}: {exc}") from exc

    missing = [key for key in _ALL_KEYS if key not in fields and not (key == "bone_prior" and rows is not None)]
    if missing:
        raise SkeletonError(f"missing keys: {', '.join(missing)}")
    if rows is None or len(rows) != expected_rows:
        raise SkeletonError(f"bone_prior needs {expected_rows} rows, got {0 if rows is None else len(rows)}")
    center = fields["center_definition"]
    if not isinstance(center, list) or len(center) != 2:
        raise SkeletonError("center_definition needs exactly two joint indices")

    try:
        return SkeletonConfig(
            joint_count=fields["joint_count"],
            joint_names=fields["joint_names"],
            bone_prior=rows,
            head_top_index=fields["head_top_index"],
            mid_hip_index=fields["mid_hip_index"],
            tree_parents=fields["tree_parents"],
            center_definition=(center[0], center[1]),
        )
    except ValidationError as exc:
        raise SkeletonError(f"invalid skeleton: {exc.errors()[0]['msg']}") from exc


def load_skeleton(path: Path | None) -> SkeletonConfig:
    if path is None:
        return default_skeleton()
    return parse_skeleton(Path(path).read_text(encoding="utf-8"))


def write_skeleton(path: Path, skeleton: SkeletonConfig) -> None:
    Path(path).write_text(format_skeleton(skeleton), encoding="utf-8")
