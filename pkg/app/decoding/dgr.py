"""Dynamic graph reasoning: every detected root votes for every joint.

Each joint is the confidence-weighted mean of the candidates p_3d^i + e^{ij}
over all detected roots i. Weights combine the heat at both endpoints with a
bone confidence that compares the offset length to the person's head-to-hip
scale and to the skeleton's bone-length prior.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from app.core.maps import TensorMap, sample_at
from app.decoding.mrkd import PersonDetection
from app.decoding.records import Pose3D
from app.shared.contracts import DecodeConfig, SkeletonConfig
from app.shared.errors import EmptyPoseError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class DecodingGraph:
    person: PersonDetection
    offsets: np.ndarray  # (K, K, 3)
    weights: np.ndarray  # (K, K)
    valid_row: np.ndarray  # (K,)

    def __post_init__(self) -> None:
        k = self.person.joint_count
        if self.offsets.shape != (k, k, 3) or self.weights.shape != (k, k) or self.valid_row.shape != (k,):
            raise ShapeError(f"decoding graph arrays do not match K={k}")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("path weights must be finite and non-negative")
        if np.any(self.weights[~self.valid_row]):
            raise ValueError("undetected roots must carry zero weight")


def dense_paths(person: PersonDetection, offset3d: TensorMap) -> np.ndarray:
    k = person.joint_count
    if offset3d.channels != 3 * k:
        raise ShapeError(f"offset map must have {3 * k} channels, got {offset3d.channels}")
    offsets = np.zeros((k, k, 3), dtype=np.float64)
    for i, root in enumerate(person.roots_2d):
        if root is not None:
            offsets[i] = sample_at(offset3d, root.position, (0, 3 * k)).reshape(k, 3)
    return offsets


def bone_confidence(
    person: PersonDetection,
    offsets: np.ndarray,
    skeleton: SkeletonConfig,
    mm_per_unit: float = 30.0,
    eps: float = 1e-6,
    notes: list[str] | None = None,
) -> np.ndarray:
    h, c = skeleton.head_top_index, skeleton.mid_hip_index
    prior_scale = skeleton.head_hip_prior
    normalizer = 0.0
    if person.roots_2d[h] is not None:
        normalizer = float(np.linalg.norm(offsets[h, c]))
    if normalizer < eps:
        fallback = prior_scale / mm_per_unit
        reason = "head-top undetected" if person.roots_2d[h] is None else "degenerate head-to-hip offset"
        message = f"person {person.person_id}: {reason}, using prior head-to-hip length {fallback:.3f}"
        logger.debug(message)
        if notes is not None:
            notes.append(message)
        normalizer = fallback

    gamma = np.abs(skeleton.prior / prior_scale)
    lengths = np.linalg.norm(offsets, axis=-1)
    conf = np.exp(-(lengths / normalizer + gamma))
    conf[~np.array(person.visibility)] = 0.0
    return conf


def target_pixels(person: PersonDetection, offsets: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Pixel per joint: the detected root, else the median of the roots' rounded 2D votes."""
    height, width = shape
    k = person.joint_count
    detected = person.detected_joints()
    pixels = np.full((k, 2), -1, dtype=np.int64)
    if not detected:
        return pixels
    origins = np.array([person.roots_2d[i].position for i in detected], dtype=np.float64)
    for j in range(k):
        root = person.roots_2d[j]
        if root is not None:
            pixels[j] = root.position
            continue
        votes = np.floor(origins + offsets[detected, j, :2] + 0.5)
        median = np.floor(np.median(votes, axis=0) + 0.5)
        pixels[j] = (min(max(int(median[0]), 0), width - 1), min(max(int(median[1]), 0), height - 1))
    return pixels


def path_weights(
    person: PersonDetection,
    heat: TensorMap,
    bone_conf: np.ndarray,
    offsets: np.ndarray | None = None,
) -> np.ndarray:
    k = person.joint_count
    if heat.channels != k + 1:
        raise ShapeError(f"heat map must have {k + 1} channels, got {heat.channels}")
    valid = np.array(person.visibility)
    source = np.zeros(k)
    target = np.zeros(k)
    pixels = target_pixels(person, offsets, (heat.height, heat.width)) if offsets is not None else None
    for j in range(k):
        root = person.roots_2d[j]
        if root is not None:
            source[j] = max(float(heat.data[j, root.y, root.x]), 0.0)
            target[j] = source[j]
        elif pixels is not None and pixels[j, 0] >= 0:
            x, y = pixels[j]
            target[j] = max(float(heat.data[j, y, x]), 0.0)
    weights = source[:, None] * bone_conf * target[None, :]
    weights[~valid] = 0.0
    return weights


def decode_pose_dgr(graph: DecodingGraph) -> Pose3D:
    person = graph.person
    k = person.joint_count
    rows = np.flatnonzero(graph.valid_row)
    joints = np.zeros((k, 3), dtype=np.float64)
    valid = np.zeros(k, dtype=bool)
    if rows.size:
        origins = np.stack([person.roots_3d[i] for i in rows])
        for j in range(k):
            w = graph.weights[rows, j]
            total = math.fsum(w)
            if total > 0:
                candidates = origins + graph.offsets[rows, j]
                joints[j] = ((w / total)[:, None] * candidates).sum(axis=0)
                valid[j] = True
            elif person.roots_3d[j] is not None:
                joints[j] = person.roots_3d[j]
                valid[j] = True
    if not valid.any():
        raise EmptyPoseError("no joint has a positive path weight", person.person_id)
    return Pose3D(joints, valid, person.person_id)


def build_graph(
    person: PersonDetection,
    heat: TensorMap,
    offset3d: TensorMap,
    skeleton: SkeletonConfig,
    config: DecodeConfig | None = None,
    notes: list[str] | None = None,
) -> DecodingGraph:
    config = config or DecodeConfig()
    offsets = dense_paths(person, offset3d)
    conf = bone_confidence(person, offsets, skeleton, config.mm_per_unit, config.eps, notes)
    weights = path_weights(person, heat, conf, offsets)
    return DecodingGraph(person, offsets, weights, np.array(person.visibility))


def decode_dgr(
    person: PersonDetection,
    heat: TensorMap,
    offset3d: TensorMap,
    skeleton: SkeletonConfig,
    config: DecodeConfig | None = None,
    notes: list[str] | None = None,
) -> tuple[Pose3D, DecodingGraph]:
    graph = build_graph(person, heat, offset3d, skeleton, config, notes)
    return decode_pose_dgr(graph), graph
