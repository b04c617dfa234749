from __future__ import annotations

import logging
from dataclasses import dataclass, field

from app.core.maps import DataMapSet
from app.decoding.baselines import decode_star, decode_tree
from app.decoding.dgr import DecodingGraph, decode_dgr
from app.decoding.mrkd import (
    PersonDetection,
    assign_keypoints,
    extract_peaks,
    find_virtual_centers,
    lift_roots_3d,
    regress_centers,
)
from app.decoding.records import Pose3D
from app.shared.contracts import DecodeConfig, GraphMode, SkeletonConfig
from app.shared.errors import DecodeError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class DecodeResult:
    graph: GraphMode
    detections: list[PersonDetection]
    poses: list[Pose3D]
    failures: dict[int, str] = field(default_factory=dict)
    graphs: dict[int, DecodingGraph] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)


def detect_persons(
    maps: DataMapSet, skeleton: SkeletonConfig, config: DecodeConfig | None = None
) -> tuple[list[PersonDetection], list[str]]:
    config = config or DecodeConfig()
    k = skeleton.joint_count
    if maps.joint_count != k:
        raise ShapeError(f"maps carry K={maps.joint_count}, skeleton has K={k}")

    peaks = extract_peaks(maps.heat, config.threshold)
    centers = [p for p in peaks if p.joint_index == k]
    joint_peaks = [p for p in peaks if p.joint_index != k]
    notes: list[str] = []

    detected_count = len(centers)
    if config.virtual_centers and joint_peaks:
        virtual = find_virtual_centers(
            regress_centers(joint_peaks, maps.scale),
            centers,
            maps.heat,
            claim_distance=config.max_center_distance,
            radius=config.virtual_center_radius,
            min_support=config.min_virtual_support,
        )
        if virtual:
            notes.append(f"{len(virtual)} virtual center(s) recovered from orphan peaks")
        centers = centers + virtual

    dets, assign_notes = assign_keypoints(
        joint_peaks,
        centers,
        maps.scale,
        joint_count=k,
        max_distance=config.max_center_distance,
        virtual_from=detected_count,
    )
    notes.extend(assign_notes)
    dets = lift_roots_3d(dets, maps.depth, config.apply_delta, center_channel=skeleton.mid_hip_index)
    return dets, notes


def decode_person(
    person: PersonDetection,
    maps: DataMapSet,
    skeleton: SkeletonConfig,
    config: DecodeConfig,
    notes: list[str],
) -> tuple[Pose3D, DecodingGraph | None]:
    if config.graph is GraphMode.STAR:
        return decode_star(person, maps.offset3d), None
    if config.graph is GraphMode.TREE:
        return decode_tree(person, maps.offset3d, skeleton), None
    return decode_dgr(person, maps.heat, maps.offset3d, skeleton, config, notes)


def decode_image(
    maps: DataMapSet, skeleton: SkeletonConfig, config: DecodeConfig | None = None
) -> DecodeResult:
    """Detect, group and decode every person in one set of maps.

    A person that cannot be decoded is reported in ``failures`` and gets an
    all-invalid pose so that ``poses`` stays aligned with ``detections``.
    """
    config = config or DecodeConfig()
    dets, notes = detect_persons(maps, skeleton, config)
    result = DecodeResult(graph=config.graph, detections=dets, poses=[], notes=notes)
    for person in dets:
        try:
            pose, graph = decode_person(person, maps, skeleton, config, result.notes)
        except DecodeError as exc:
            result.failures[person.person_id] = str(exc)
            result.poses.append(Pose3D.invalid(skeleton.joint_count, person.person_id))
            logger.debug("Decode failed: %s", exc)
            continue
        result.poses.append(pose)
        if graph is not None and config.keep_graphs:
            result.graphs[person.person_id] = graph
    logger.info(
        "Decoded %d person(s) with %s graph, %d failure(s)", len(dets), config.graph.value, len(result.failures)
    )
    return result
