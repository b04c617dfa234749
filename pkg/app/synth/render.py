"""Ground-truth map rendering for synthetic scenes.

Heat planes are max-composited Gaussians. Scale and 3D offset maps are
written around every visible joint and body center ("owners"); a pixel
covered by several owners belongs to the nearest one, earlier owners
winning ties (persons in order, joints by index, then the center).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from app.core.maps import DataMapSet, TensorMap, delta_inverse_array
from app.shared.contracts import DepthEncoding, RenderParams, SkeletonConfig
from app.synth.scene import Scene, person_center


@dataclass(frozen=True)
class Owner:
    person: int
    joint: int  # joint_count for the body center
    x: int
    y: int
    z: float


@dataclass(frozen=True)
class Ownership:
    owners: tuple[Owner, ...]
    index: np.ndarray  # (H, W) owner index, -1 where nobody writes

    def pixels_of(self, owner: int) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.index == owner)


def gaussian_patch(radius: int, sigma: float) -> np.ndarray:
    axis = np.arange(-radius, radius + 1, dtype=np.float64)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    return np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))


def draw_gaussian(plane: np.ndarray, x: int, y: int, sigma: float, amplitude: float = 1.0) -> None:
    radius = int(math.ceil(3.0 * sigma))
    patch = gaussian_patch(radius, sigma) * amplitude
    height, width = plane.shape
    left, right = min(x, radius), min(width - x, radius + 1)
    top, bottom = min(y, radius), min(height - y, radius + 1)
    if left + right <= 0 or top + bottom <= 0:
        return
    window = plane[y - top : y + bottom, x - left : x + right]
    np.maximum(window, patch[radius - top : radius + bottom, radius - left : radius + right], out=window)


def heat_plane(
    points: list[tuple[int, int, float]], height: int, width: int, sigma: float
) -> np.ndarray:
    """Max-composite of Gaussians given (x, y, amplitude) triples."""
    plane = np.zeros((height, width), dtype=np.float64)
    for x, y, amplitude in points:
        if amplitude > 0:
            draw_gaussian(plane, x, y, sigma, amplitude)
    return plane


def nearest_fill(points: list[tuple[int, int]], radius: float, height: int, width: int) -> np.ndarray:
    """Index of the nearest point within ``radius`` per pixel, -1 elsewhere; earlier points win ties."""
    best = np.full((height, width), np.inf)
    index = np.full((height, width), -1, dtype=np.int64)
    reach = int(math.floor(radius))
    for i, (x, y) in enumerate(points):
        x0, x1 = max(x - reach, 0), min(x + reach + 1, width)
        y0, y1 = max(y - reach, 0), min(y + reach + 1, height)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d2 = (xx - x) ** 2 + (yy - y) ** 2
        window_best = best[y0:y1, x0:x1]
        closer = (d2 <= radius * radius) & (d2 < window_best)
        window_best[closer] = d2[closer]
        index[y0:y1, x0:x1][closer] = i
    return index


def scene_owners(scene: Scene, skeleton: SkeletonConfig) -> list[Owner]:
    owners: list[Owner] = []
    k = skeleton.joint_count
    for n, person in enumerate(scene.persons):
        for j in range(k):
            if person.visible[j]:
                x, y, z = person.joints[j]
                owners.append(Owner(n, j, int(x), int(y), float(z)))
        cx, cy, cz = person_center(person, skeleton)
        owners.append(Owner(n, k, cx, cy, cz))
    return owners


def compute_ownership(scene: Scene, skeleton: SkeletonConfig, radius: float) -> Ownership:
    owners = scene_owners(scene, skeleton)
    index = nearest_fill([(o.x, o.y) for o in owners], radius, scene.height, scene.width)
    return Ownership(tuple(owners), index)


def encode_depth(z: np.ndarray | float, encoding: DepthEncoding) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if encoding is DepthEncoding.DELTA_INVERSE:
        return delta_inverse_array(z)
    return z


def render_heat(
    scene: Scene, skeleton: SkeletonConfig, params: RenderParams, amplitudes: np.ndarray | None = None
) -> np.ndarray:
    """Heat planes (K+1, H, W); ``amplitudes`` is (N, K+1), default all ones."""
    k = skeleton.joint_count
    if amplitudes is None:
        amplitudes = np.ones((scene.person_count, k + 1))
    heat = np.zeros((k + 1, scene.height, scene.width), dtype=np.float64)
    for j in range(k + 1):
        points = []
        for n, person in enumerate(scene.persons):
            if j == k:
                cx, cy, _ = person_center(person, skeleton)
                points.append((cx, cy, float(amplitudes[n, j])))
            elif person.visible[j]:
                points.append((int(person.joints[j, 0]), int(person.joints[j, 1]), float(amplitudes[n, j])))
        heat[j] = heat_plane(points, scene.height, scene.width, params.gaussian_sigma)
    return heat


def render_depth(scene: Scene, skeleton: SkeletonConfig, params: RenderParams) -> np.ndarray:
    k = skeleton.joint_count
    depth = np.zeros((k, scene.height, scene.width), dtype=np.float64)
    for j in range(k):
        instances = [p.joints[j] for p in scene.persons if p.visible[j]]
        if not instances:
            continue
        index = nearest_fill([(int(x), int(y)) for x, y, _ in instances], params.offset_radius, scene.height, scene.width)
        values = encode_depth(np.array([z for _, _, z in instances]), params.depth_encoding)
        mask = index >= 0
        depth[j][mask] = values[index[mask]]
    return depth


def render_fields(
    scene: Scene, skeleton: SkeletonConfig, ownership: Ownership
) -> tuple[np.ndarray, np.ndarray]:
    """Scale (2, H, W) and 3D offset (3K, H, W) fields from an ownership map."""
    k = skeleton.joint_count
    height, width = scene.height, scene.width
    scale = np.zeros((2, height, width), dtype=np.float64)
    offset3d = np.zeros((3 * k, height, width), dtype=np.float64)
    ys, xs = np.nonzero(ownership.index >= 0)
    if ys.size == 0:
        return scale, offset3d

    centers = np.array([person_center(p, skeleton)[:2] for p in scene.persons], dtype=np.float64)
    targets = np.stack([p.joints for p in scene.persons])  # (N, K, 3)
    owner_person = np.array([o.person for o in ownership.owners])
    owner_xyz = np.array([[o.x, o.y, o.z] for o in ownership.owners], dtype=np.float64)

    owned = ownership.index[ys, xs]
    people = owner_person[owned]
    scale[0, ys, xs] = centers[people, 0] - xs
    scale[1, ys, xs] = centers[people, 1] - ys
    vectors = targets[people] - owner_xyz[owned][:, None, :]  # (P, K, 3)
    offset3d[:, ys, xs] = vectors.reshape(len(owned), 3 * k).T
    return scale, offset3d


def synth_feature(heat: np.ndarray, scale: np.ndarray, depth: np.ndarray, offset3d: np.ndarray, channels: int) -> np.ndarray:
    """Deterministic stand-in for a backbone feature map: cycles through the map planes."""
    stacked = np.concatenate([heat, scale, depth, offset3d], axis=0)
    picks = [c % stacked.shape[0] for c in range(channels)]
    return stacked[picks]


def render_maps(scene: Scene, skeleton: SkeletonConfig, params: RenderParams | None = None) -> DataMapSet:
    params = params or RenderParams()
    heat = render_heat(scene, skeleton, params)
    depth = render_depth(scene, skeleton, params)
    ownership = compute_ownership(scene, skeleton, params.offset_radius)
    scale, offset3d = render_fields(scene, skeleton, ownership)
    feature = None
    if params.feature_channels > 0:
        feature = TensorMap(synth_feature(heat, scale, depth, offset3d, params.feature_channels))
    return DataMapSet(
        heat=TensorMap(heat),
        scale=TensorMap(scale),
        depth=TensorMap(depth),
        offset3d=TensorMap(offset3d),
        feature=feature,
    )


def supervision_mask(scene: Scene, skeleton: SkeletonConfig, params: RenderParams | None = None) -> np.ndarray:
    """Pixels within offset_radius of any visible joint or body center."""
    params = params or RenderParams()
    owners = scene_owners(scene, skeleton)
    index = nearest_fill([(o.x, o.y) for o in owners], params.offset_radius, scene.height, scene.width)
    return index >= 0
