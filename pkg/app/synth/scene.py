"""Seeded synthetic multi-person scenes in image space.

Pose space is (x px, y px, z depth units) with depth units equal to pixel
units; ``Scene.mm_per_unit`` maps it to millimeters for evaluation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from app.core.skeleton import rest_pose_for
from app.shared.contracts import SceneConfig, SkeletonConfig
from app.shared.errors import GenerationError

logger = logging.getLogger(__name__)

SCENE_HEADER = "# scene v1"
MIN_IMAGE_SIZE = 32
CROWD_INDEX_MAX = math.nextafter(1.0, 0.0)


@dataclass(frozen=True, eq=False)
class PersonPose:
    joints: np.ndarray
    visible: np.ndarray

    def __post_init__(self) -> None:
        joints = np.array(self.joints, dtype=np.float64)
        visible = np.array(self.visible, dtype=bool)
        if joints.ndim != 2 or joints.shape[1] != 3 or visible.shape != (joints.shape[0],):
            raise ValueError(f"person pose must be (K, 3) with K flags, got {joints.shape} and {visible.shape}")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "visible", visible)

    @property
    def joint_count(self) -> int:
        return int(self.joints.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PersonPose):
            return NotImplemented
        return np.array_equal(self.joints, other.joints) and np.array_equal(self.visible, other.visible)


@dataclass(frozen=True)
class Scene:
    height: int
    width: int
    seed: int
    crowding: float
    spacing: float
    spread: float
    mm_per_unit: float
    persons: tuple[PersonPose, ...]

    @property
    def person_count(self) -> int:
        return len(self.persons)


def person_center(person: PersonPose, skeleton: SkeletonConfig) -> tuple[int, int, float]:
    """Body center as the pixel nearest the hip midpoint, with the mean hip depth."""
    left, right = skeleton.center_definition
    mid = (person.joints[left] + person.joints[right]) / 2.0
    return int(math.floor(mid[0] + 0.5)), int(math.floor(mid[1] + 0.5)), float(mid[2])


def unit_scale(skeleton: SkeletonConfig, image_size: tuple[int, int], config: SceneConfig) -> float:
    """Millimeters per pose unit, raised when a person would not fit the image."""
    root = skeleton.tree_root
    extent_mm = 2.0 * float(skeleton.prior[root].max()) * 1.15
    fit = extent_mm / (0.85 * min(image_size))
    return max(config.mm_per_unit, fit)


def _mirror_pairs(skeleton: SkeletonConfig) -> dict[int, int]:
    left, right = skeleton.center_definition
    parents = skeleton.tree_parents
    prior = skeleton.prior
    if left == right or parents[left] != parents[right] or parents[left] == -1:
        return {}
    parent = parents[left]
    if prior[parent, left] != prior[parent, right]:
        return {}
    return {left: right, right: left}


def _bone_step(direction: np.ndarray, length: float) -> np.ndarray:
    """Integer planar step with a depth step solved so the 3D length is exact."""
    dx = math.trunc(length * direction[0])
    dy = math.trunc(length * direction[1])
    if dx == 0 and dy == 0:
        if abs(direction[0]) >= abs(direction[1]):
            dx = 1 if direction[0] >= 0 else -1
        else:
            dy = 1 if direction[1] >= 0 else -1
    dz = math.sqrt(max(length * length - dx * dx - dy * dy, 0.0))
    return np.array([dx, dy, dz if direction[2] >= 0 else -dz], dtype=np.float64)


def _sample_pose(
    rng: np.random.Generator,
    skeleton: SkeletonConfig,
    rest: np.ndarray | None,
    root: tuple[int, int, float],
    mm_per_unit: float,
    config: SceneConfig,
) -> np.ndarray:
    k = skeleton.joint_count
    prior = skeleton.prior
    mirrors = _mirror_pairs(skeleton)
    yaw = rng.uniform(-math.pi / 3, math.pi / 3)
    cos_yaw, sin_yaw = math.cos(yaw), math.sin(yaw)

    joints = np.zeros((k, 3), dtype=np.float64)
    joints[skeleton.tree_root] = root
    placed = {skeleton.tree_root}
    for joint in skeleton.traversal_order()[1:]:
        parent = skeleton.tree_parents[joint]
        twin = mirrors.get(joint)
        if twin is not None and twin in placed:
            joints[joint] = 2.0 * joints[parent] - joints[twin]
            placed.add(joint)
            continue

        if rest is not None:
            base = rest[joint] - rest[parent]
            base = np.array([base[0] * cos_yaw + base[2] * sin_yaw, base[1], -base[0] * sin_yaw + base[2] * cos_yaw])
            base /= np.linalg.norm(base)
        else:
            base = rng.normal(size=3)
            base /= np.linalg.norm(base)
        direction = base + config.pose_variation * rng.normal(size=3)
        norm = np.linalg.norm(direction)
        direction = base if norm < 1e-9 else direction / norm

        jitter = rng.uniform(1.0 - config.bone_jitter, 1.0 + config.bone_jitter)
        length = prior[parent, joint] * jitter / mm_per_unit
        if length < 1.0:
            raise GenerationError(
                f"bone {parent}-{joint} is {length:.2f} px at {mm_per_unit} mm per unit; too short for the pixel grid"
            )
        joints[joint] = joints[parent] + _bone_step(direction, length)
        placed.add(joint)
    return joints


def _fits(
    joints: np.ndarray,
    center: tuple[int, int],
    placed: list[np.ndarray],
    occupied: set[tuple[int, int]],
    height: int,
    width: int,
) -> bool:
    xs, ys, zs = joints[:, 0], joints[:, 1], joints[:, 2]
    if np.any(xs < 0) or np.any(xs > width - 1) or np.any(ys < 0) or np.any(ys > height - 1):
        return False
    if np.any(zs <= 0):
        return False
    pixels = {(int(x), int(y)) for x, y in zip(xs, ys)}
    if len(pixels) != len(joints) or pixels & occupied:
        return False
    # same-channel peaks of different persons must not touch
    planar = np.vstack([joints[:, :2], center])
    for other in placed:
        if np.any(np.max(np.abs(planar - other), axis=1) < 2):
            return False
    return True


def generate_scene(
    skeleton: SkeletonConfig,
    n_persons: int,
    image_size: tuple[int, int] = (128, 128),
    seed: int = 0,
    crowding: float = 0.5,
    config: SceneConfig | None = None,
) -> Scene:
    config = config or SceneConfig()
    height, width = image_size
    if n_persons < 1:
        raise ValueError(f"n_persons must be at least 1, got {n_persons}")
    if height < MIN_IMAGE_SIZE or width < MIN_IMAGE_SIZE:
        raise ValueError(f"image size must be at least {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}, got {height}x{width}")
    if not 0.0 <= crowding <= 1.0:
        raise ValueError(f"crowding must be in [0, 1], got {crowding}")

    rng = np.random.default_rng(seed)
    mm_per_unit = unit_scale(skeleton, image_size, config)
    rest = rest_pose_for(skeleton)
    spread = config.min_root_distance + (1.0 - crowding) * config.spread * max(height, width)

    persons: list[PersonPose] = []
    roots: list[np.ndarray] = []
    placed: list[np.ndarray] = []
    occupied: set[tuple[int, int]] = set()
    for index in range(n_persons):
        for _ in range(config.max_retries):
            if not roots:
                root_x = int(rng.integers(width // 4, 3 * width // 4 + 1))
                root_y = int(rng.integers(int(0.4 * height), int(0.6 * height) + 1))
            else:
                anchor = roots[int(rng.integers(len(roots)))]
                radius = rng.uniform(config.min_root_distance, spread)
                angle = rng.uniform(0.0, 2.0 * math.pi)
                root_x = int(math.floor(anchor[0] + radius * math.cos(angle) + 0.5))
                root_y = int(math.floor(anchor[1] + 0.3 * radius * math.sin(angle) + 0.5))
            root_z = rng.uniform(config.min_depth, config.max_depth)
            joints = _sample_pose(rng, skeleton, rest, (root_x, root_y, root_z), mm_per_unit, config)
            candidate = PersonPose(joints, np.ones(skeleton.joint_count, dtype=bool))
            center = person_center(candidate, skeleton)[:2]
            if _fits(joints, center, placed, occupied, height, width):
                break
        else:
            raise GenerationError(
                f"could not place person {index} after {config.max_retries} attempts "
                f"({height}x{width}, crowding={crowding})"
            )
        persons.append(candidate)
        placed.append(np.vstack([joints[:, :2], center]))
        roots.append(joints[skeleton.tree_root])
        occupied |= {(int(x), int(y)) for x, y in joints[:, :2]}

    logger.debug("Generated scene seed=%d persons=%d mm_per_unit=%.2f", seed, n_persons, mm_per_unit)
    return Scene(
        height=height,
        width=width,
        seed=seed,
        crowding=float(crowding),
        spacing=config.min_root_distance,
        spread=float(spread),
        mm_per_unit=float(mm_per_unit),
        persons=tuple(persons),
    )


def format_scene(scene: Scene) -> str:
    lines = [
        SCENE_HEADER,
        f"size: {scene.height} {scene.width}",
        f"seed: {scene.seed}",
        f"crowding: {scene.crowding!r}",
        f"spacing: {scene.spacing!r}",
        f"spread: {scene.spread!r}",
        f"mm_per_unit: {scene.mm_per_unit!r}",
        f"persons: {scene.person_count}",
    ]
    for index, person in enumerate(scene.persons):
        lines.append(f"person {index}")
        for j, (point, visible) in enumerate(zip(person.joints, person.visible)):
            x, y, z = (float(v) for v in point)
            lines.append(f"  joint {j} {x!r} {y!r} {z!r} {int(visible)}")
        lines.append("end")
    return "\n".join(lines) + "\n"


def parse_scene(text: str) -> Scene:
    lines = [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    header: dict[str, str] = {}
    cursor = 0
    while cursor < len(lines) and not lines[cursor].startswith("person "):
        key, sep, value = lines[cursor].partition(":")
        if not sep:
            raise ValueError(f"scene header line {lines[cursor]!r} is not key: value")
        header[key.strip()] = value.strip()
        cursor += 1
    try:
        height, width = (int(v) for v in header["size"].split())
        expected_persons = int(header["persons"])
        seed = int(header["seed"])
        crowding = float(header["crowding"])
        spacing = float(header["spacing"])
        spread = float(header["spread"])
        mm_per_unit = float(header["mm_per_unit"])
    except KeyError as exc:
        raise ValueError(f"scene header lacks {exc.args[0]}") from exc

    persons: list[PersonPose] = []
    while cursor < len(lines):
        if not lines[cursor].startswith("person "):
            raise ValueError(f"expected a person block, got {lines[cursor]!r}")
        cursor += 1
        joints: list[list[float]] = []
        visible: list[bool] = []
        while cursor < len(lines) and lines[cursor] != "end":
            parts = lines[cursor].split()
            if len(parts) != 6 or parts[0] != "joint" or int(parts[1]) != len(joints):
                raise ValueError(f"bad joint line {lines[cursor]!r}")
            joints.append([float(parts[2]), float(parts[3]), float(parts[4])])
            visible.append(parts[5] == "1")
            cursor += 1
        if cursor == len(lines):
            raise ValueError("person block is missing 'end'")
        cursor += 1
        persons.append(PersonPose(np.array(joints), np.array(visible)))

    if len(persons) != expected_persons:
        raise ValueError(f"scene declares {expected_persons} persons, found {len(persons)}")
    return Scene(height, width, seed, crowding, spacing, spread, mm_per_unit, tuple(persons))


def write_scene(path: Path, scene: Scene) -> None:
    Path(path).write_text(format_scene(scene), encoding="utf-8")


def read_scene(path: Path) -> Scene:
    return parse_scene(Path(path).read_text(encoding="utf-8"))


def joint_bbox(person: PersonPose) -> tuple[float, float, float, float] | None:
    """Inclusive (x_min, y_min, x_max, y_max) over visible joints."""
    if not person.visible.any():
        return None
    points = person.joints[person.visible]
    return (
        float(points[:, 0].min()),
        float(points[:, 1].min()),
        float(points[:, 0].max()),
        float(points[:, 1].max()),
    )


def inside_bbox(points: np.ndarray, bbox: tuple[float, float, float, float]) -> np.ndarray:
    x_min, y_min, x_max, y_max = bbox
    return (points[:, 0] >= x_min) & (points[:, 0] <= x_max) & (points[:, 1] >= y_min) & (points[:, 1] <= y_max)


def crowd_indices(persons: Sequence[PersonPose]) -> list[float]:
    """Per person: other persons' visible joints inside its joint box, over its joint count."""
    boxes = [joint_bbox(p) for p in persons]
    indices = []
    for n, box in enumerate(boxes):
        if box is None:
            indices.append(0.0)
            continue
        count = 0
        for m, other in enumerate(persons):
            if m != n:
                count += int((inside_bbox(other.joints, box) & other.visible).sum())
        indices.append(min(count / persons[n].joint_count, CROWD_INDEX_MAX))
    return indices
