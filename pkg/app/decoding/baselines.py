"""Single-root decoders used as comparison baselines."""

from __future__ import annotations

import math

import numpy as np

from app.core.maps import TensorMap, sample_at
from app.decoding.mrkd import PersonDetection
from app.decoding.records import Pose3D
from app.shared.contracts import SkeletonConfig
from app.shared.errors import DecodeError, ShapeError


def _check_offsets(person: PersonDetection, offset3d: TensorMap) -> int:
    k = person.joint_count
    if offset3d.channels != 3 * k:
        raise ShapeError(f"offset map must have {3 * k} channels, got {offset3d.channels}")
    return k


def decode_star(person: PersonDetection, offset3d: TensorMap) -> Pose3D:
    """Every joint from the body center: p^j = c_3d + e^{c,j} read at the center pixel."""
    k = _check_offsets(person, offset3d)
    if not person.center_detected:
        raise DecodeError("body center not detected", person.person_id)
    if person.center_3d is None:
        raise DecodeError("body center has no depth", person.person_id)
    offsets = sample_at(offset3d, person.center.position, (0, 3 * k)).reshape(k, 3)
    joints = person.center_3d[None, :] + offsets
    return Pose3D(joints, np.ones(k, dtype=bool), person.person_id)


def decode_tree(person: PersonDetection, offset3d: TensorMap, skeleton: SkeletonConfig) -> Pose3D:
    """Parent-to-child accumulation from the tree root, sampling at each parent's rounded estimate."""
    k = _check_offsets(person, offset3d)
    root = skeleton.tree_root
    if person.roots_3d[root] is None:
        raise DecodeError(f"tree root {skeleton.joint_names[root]} not detected", person.person_id)

    joints = np.zeros((k, 3), dtype=np.float64)
    valid = np.zeros(k, dtype=bool)
    joints[root] = person.roots_3d[root]
    valid[root] = True
    for joint in skeleton.traversal_order()[1:]:
        parent = skeleton.tree_parents[joint]
        if not valid[parent]:
            continue
        x = int(math.floor(joints[parent, 0] + 0.5))
        y = int(math.floor(joints[parent, 1] + 0.5))
        if not offset3d.contains(x, y):
            continue
        joints[joint] = joints[parent] + sample_at(offset3d, (x, y), (3 * joint, 3 * joint + 3))
        valid[joint] = True
    return Pose3D(joints, valid, person.person_id)
