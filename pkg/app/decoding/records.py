"""Decoded poses and detections, plus their line-oriented text formats."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.decoding.mrkd import PersonDetection

POSES_HEADER = "# poses v1"
DETECTIONS_HEADER = "# detections v1"


@dataclass(frozen=True, eq=False)
class Pose3D:
    joints: np.ndarray
    valid: np.ndarray
    person_id: int | None = None

    def __post_init__(self) -> None:
        joints = np.array(self.joints, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if joints.ndim != 2 or joints.shape[1] != 3 or valid.shape != (joints.shape[0],):
            raise ValueError(f"pose must be (K, 3) with K flags, got {joints.shape} and {valid.shape}")
        joints[~valid] = 0.0
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "valid", valid)

    @property
    def joint_count(self) -> int:
        return int(self.joints.shape[0])

    @classmethod
    def invalid(cls, joint_count: int, person_id: int | None = None) -> Pose3D:
        return cls(np.zeros((joint_count, 3)), np.zeros(joint_count, dtype=bool), person_id)


def _num(value: float) -> str:
    return f"{float(value):.6f}"


def format_poses(poses: list[Pose3D], graph: str) -> str:
    lines = [POSES_HEADER, f"graph: {graph}", f"persons: {len(poses)}"]
    for pose in poses:
        person_id = -1 if pose.person_id is None else pose.person_id
        lines.append(f"person {person_id}")
        for j, (point, valid) in enumerate(zip(pose.joints, pose.valid)):
            lines.append(f"  joint {j} {_num(point[0])} {_num(point[1])} {_num(point[2])} {int(valid)}")
        lines.append("end")
    return "\n".join(lines) + "\n"


def parse_poses(text: str) -> tuple[list[Pose3D], str]:
    lines = [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if len(lines) < 2 or not lines[0].startswith("graph:") or not lines[1].startswith("persons:"):
        raise ValueError("poses file must start with 'graph:' and 'persons:' lines")
    graph = lines[0].partition(":")[2].strip()
    expected = int(lines[1].partition(":")[2])
    poses: list[Pose3D] = []
    cursor = 2
    while cursor < len(lines):
        head = lines[cursor].split()
        if len(head) != 2 or head[0] != "person":
            raise ValueError(f"expected a person block, got {lines[cursor]!r}")
        person_id = int(head[1])
        cursor += 1
        joints: list[list[float]] = []
        valid: list[bool] = []
        while cursor < len(lines) and lines[cursor] != "end":
            parts = lines[cursor].split()
            if len(parts) != 6 or parts[0] != "joint" or int(parts[1]) != len(joints):
                raise ValueError(f"bad joint line {lines[cursor]!r}")
            joints.append([float(v) for v in parts[2:5]])
            valid.append(parts[5] == "1")
            cursor += 1
        if cursor == len(lines):
            raise ValueError("person block is missing 'end'")
        cursor += 1
        poses.append(Pose3D(np.array(joints), np.array(valid), None if person_id < 0 else person_id))
    if len(poses) != expected:
        raise ValueError(f"poses file declares {expected} persons, found {len(poses)}")
    return poses, graph


def format_detections(dets: list[PersonDetection]) -> str:
    lines = [DETECTIONS_HEADER, f"persons: {len(dets)}"]
    for det in dets:
        kind = "detected" if det.center_detected else "virtual"
        lines.append(
            f"person {det.person_id} center {det.center.x} {det.center.y} {_num(det.center.confidence)} {kind}"
        )
        for j, (root, point) in enumerate(zip(det.roots_2d, det.roots_3d)):
            if root is None or point is None:
                lines.append(f"  joint {j} - - - - 0")
            else:
                lines.append(
                    f"  joint {j} {root.x} {root.y} {_num(point[2])} {_num(root.confidence)} 1"
                )
        lines.append("end")
    return "\n".join(lines) + "\n"


def write_poses(path: Path, poses: list[Pose3D], graph: str) -> None:
    Path(path).write_text(format_poses(poses, graph), encoding="utf-8")


def read_poses(path: Path) -> tuple[list[Pose3D], str]:
    return parse_poses(Path(path).read_text(encoding="utf-8"))


def write_detections(path: Path, dets: list[PersonDetection]) -> None:
    Path(path).write_text(format_detections(dets), encoding="utf-8")
