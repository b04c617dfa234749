"""Seeded occlusion corruption of ground-truth maps.

The input maps are expected to be the clean render of ``scene``: occluded
heat channels are re-composited from the scene rather than edited in place.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.core.maps import DataMapSet, TensorMap
from app.shared.contracts import CorruptionParams, RenderParams, SkeletonConfig
from app.synth.render import compute_ownership, render_heat
from app.synth.scene import Scene, crowd_indices, inside_bbox, joint_bbox

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OcclusionPlan:
    occluded: np.ndarray  # (N, K)
    covered: np.ndarray  # (N, K), inside another person's joint box
    center_suppressed: np.ndarray  # (N,)

    @property
    def is_empty(self) -> bool:
        return not self.occluded.any() and not self.center_suppressed.any()


def covered_joints(scene: Scene) -> np.ndarray:
    k = scene.persons[0].joint_count if scene.persons else 0
    covered = np.zeros((scene.person_count, k), dtype=bool)
    boxes = [joint_bbox(p) for p in scene.persons]
    for n, person in enumerate(scene.persons):
        for m, box in enumerate(boxes):
            if m != n and box is not None:
                covered[n] |= inside_bbox(person.joints, box) & person.visible
    return covered


def center_crowd_probability(crowd: Sequence[float], occlusion_prob: float, scale: float) -> np.ndarray:
    """occlusion_prob * (crowd / scale)^2, capped at 1: zero for isolated persons."""
    ratio = np.asarray(crowd, dtype=np.float64) / scale
    return np.minimum(1.0, occlusion_prob * ratio * ratio)


def plan_occlusion(
    scene: Scene,
    skeleton: SkeletonConfig,
    occlusion_prob: float,
    seed: int,
    params: CorruptionParams | None = None,
) -> tuple[OcclusionPlan, np.random.Generator]:
    if not 0.0 <= occlusion_prob <= 1.0:
        raise ValueError(f"occlusion_prob must be in [0, 1], got {occlusion_prob}")
    params = params or CorruptionParams()
    rng = np.random.default_rng(seed)
    k = skeleton.joint_count
    visible = np.array([p.visible for p in scene.persons], dtype=bool).reshape(scene.person_count, k)
    draws = rng.random((scene.person_count, k))

    covered = covered_joints(scene) if params.crowd_occlusion else np.zeros_like(visible)
    probability = np.where(covered, min(1.0, 2.0 * occlusion_prob), occlusion_prob)
    occluded = (draws < probability) & visible

    # the center inherits only the crowd-independent draws; crowding reaches it through its own draw
    left, right = skeleton.center_definition
    defining = sorted({left, right, skeleton.mid_hip_index})
    center_suppressed = ((draws < occlusion_prob) & visible)[:, defining].any(axis=1)
    if params.crowd_occlusion:
        center_suppressed |= rng.random(scene.person_count) < center_crowd_probability(
            crowd_indices(scene.persons), occlusion_prob, params.crowd_center_scale
        )
    if params.suppress_centers:
        center_suppressed[:] = True
    return OcclusionPlan(occluded, covered, center_suppressed), rng


def corrupt_maps(
    maps: DataMapSet,
    scene: Scene,
    skeleton: SkeletonConfig,
    occlusion_prob: float,
    seed: int,
    params: CorruptionParams | None = None,
    render_params: RenderParams | None = None,
) -> DataMapSet:
    params = params or CorruptionParams()
    render_params = render_params or RenderParams()
    plan, rng = plan_occlusion(scene, skeleton, occlusion_prob, seed, params)
    if plan.is_empty:
        return maps

    k = skeleton.joint_count
    amplitudes = np.ones((scene.person_count, k + 1))
    amplitudes[:, :k][plan.occluded] = params.suppressed_amplitude
    amplitudes[plan.center_suppressed, k] = params.suppressed_amplitude
    touched = np.flatnonzero((amplitudes < 1.0).any(axis=0))
    heat = maps.heat.data.astype(np.float64)
    heat[touched] = render_heat(scene, skeleton, render_params, amplitudes)[touched]

    ownership = compute_ownership(scene, skeleton, render_params.offset_radius)
    scale = maps.scale.data.astype(np.float64)
    offset3d = maps.offset3d.data.astype(np.float64)

    silenced: set[int] = set()
    for o, owner in enumerate(ownership.owners):
        if owner.joint == k:
            if plan.center_suppressed[owner.person]:
                silenced.add(o)
        elif plan.occluded[owner.person, owner.joint]:
            silenced.add(o)

    if params.offset_noise > 0:
        for n, person in enumerate(scene.persons):
            targets = np.flatnonzero(plan.occluded[n])
            for o, owner in enumerate(ownership.owners):
                if owner.person != n or o in silenced:
                    continue
                ys, xs = ownership.pixels_of(o)
                for j in targets:
                    reach = np.linalg.norm(person.joints[j] - np.array([owner.x, owner.y, owner.z]))
                    drift = rng.normal(0.0, params.offset_noise * reach, size=3)
                    offset3d[3 * j : 3 * j + 3, ys, xs] += drift[:, None]

    for o in sorted(silenced):
        ys, xs = ownership.pixels_of(o)
        scale[:, ys, xs] = 0.0
        offset3d[:, ys, xs] = 0.0

    logger.debug(
        "Corrupted scene seed=%d: %d joints occluded, %d centers suppressed",
        scene.seed,
        int(plan.occluded.sum()),
        int(plan.center_suppressed.sum()),
    )
    return DataMapSet(
        heat=TensorMap(heat),
        scale=TensorMap(scale),
        depth=maps.depth,
        offset3d=TensorMap(offset3d),
        feature=maps.feature,
    )
