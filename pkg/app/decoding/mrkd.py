"""Multi-root keypoint detection and grouping.

Peaks are extracted per heat channel, every joint peak regresses its body
center through the scale map, and joints are matched to centers with one
minimum-cost assignment per joint category.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.optimize import linear_sum_assignment

from app.core.maps import TensorMap, delta_transform, sample_at
from app.shared.errors import BoundsError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Peak:
    joint_index: int
    x: int
    y: int
    confidence: float

    @property
    def position(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass
class PersonDetection:
    person_id: int
    center: Peak
    roots_2d: list[Peak | None]
    roots_3d: list[np.ndarray | None] = field(default_factory=list)
    center_3d: np.ndarray | None = None
    center_detected: bool = True

    def __post_init__(self) -> None:
        if not self.roots_3d:
            self.roots_3d = [None] * len(self.roots_2d)

    @property
    def joint_count(self) -> int:
        return len(self.roots_2d)

    @property
    def visibility(self) -> list[bool]:
        return [root is not None for root in self.roots_2d]

    def detected_joints(self) -> list[int]:
        return [j for j, root in enumerate(self.roots_2d) if root is not None]


def extract_peaks(heat: TensorMap, threshold: float) -> list[Peak]:
    """Local maxima per channel, ordered by channel then raster position.

    A pixel qualifies when it is >= threshold, >= all 8 neighbors and strictly
    greater than the neighbors that precede it in raster order.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    peaks: list[Peak] = []
    for channel in range(heat.channels):
        plane = heat.data[channel].astype(np.float64)
        neighborhood = maximum_filter(plane, size=3, mode="constant", cval=-np.inf)
        padded = np.pad(plane, 1, mode="constant", constant_values=-np.inf)
        h, w = plane.shape
        preceding = np.maximum.reduce(
            [
                padded[0:h, 0:w],
                padded[0:h, 1 : w + 1],
                padded[0:h, 2 : w + 2],
                padded[1 : h + 1, 0:w],
            ]
        )
        mask = (plane >= neighborhood) & (plane > preceding) & (plane >= threshold)
        ys, xs = np.nonzero(mask)
        peaks.extend(Peak(channel, int(x), int(y), float(plane[y, x])) for y, x in zip(ys, xs))
    return peaks


def regress_centers(peaks: list[Peak], scale: TensorMap, center_index: int | None = None) -> list[np.ndarray]:
    """c = p + scale(p) for every joint peak; peaks on ``center_index`` are skipped."""
    if scale.channels != 2:
        raise ValueError(f"scale map must have 2 channels, got {scale.channels}")
    regressed = []
    for peak in peaks:
        if peak.joint_index == center_index:
            continue
        offset = sample_at(scale, peak.position, (0, 2))
        regressed.append(np.array([peak.x, peak.y], dtype=np.float64) + offset)
    return regressed


def _optimal_cost(cost: np.ndarray) -> float:
    if cost.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def solve_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost rectangular assignment, ties resolved lexicographically.

    Every row of the smaller side is matched; among optimal matchings the one
    giving the lowest-index rows the lowest-index partners is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {cost.shape}")
    if cost.size == 0:
        return []
    transposed = cost.shape[0] > cost.shape[1]
    matrix = cost.T if transposed else cost
    n_rows, n_cols = matrix.shape
    best = _optimal_cost(matrix)
    tolerance = 1e-9 * max(1.0, abs(best))

    chosen: list[tuple[int, int]] = []
    spent = 0.0
    free = list(range(n_cols))
    for row in range(n_rows):
        for col in free:
            rest = [c for c in free if c != col]
            remainder = _optimal_cost(matrix[np.ix_(range(row + 1, n_rows), rest)])
            if spent + matrix[row, col] + remainder <= best + tolerance:
                chosen.append((row, col))
                spent += matrix[row, col]
                free.remove(col)
                break
        else:
            logger.warning("Tie-breaking lost optimality at row %d; using the raw solver matching", row)
            rows, cols = linear_sum_assignment(matrix)
            chosen = list(zip(rows.tolist(), cols.tolist()))
            break
    pairs = [(col, row) for row, col in chosen] if transposed else chosen
    return sorted(pairs)


def find_virtual_centers(
    regressed: list[np.ndarray],
    centers: list[Peak],
    heat: TensorMap,
    claim_distance: float,
    radius: float,
    min_support: int = 1,
) -> list[Peak]:
    """Cluster regressed centers of orphan peaks into stand-in body centers.

    Each virtual center carries the center-channel heat at its pixel.
    """
    center_index = heat.channels - 1
    height, width = heat.height, heat.width
    clusters: list[list[int]] = []
    means: list[np.ndarray] = []
    for m, point in enumerate(regressed):
        if any(math.dist(point, c.position) < claim_distance for c in centers):
            continue
        for cluster, mean in zip(clusters, means):
            if np.linalg.norm(point - mean) <= radius:
                cluster.append(m)
                mean[:] = np.mean([regressed[i] for i in cluster], axis=0)
                break
        else:
            clusters.append([m])
            means.append(point.copy())

    virtual: list[Peak] = []
    for cluster, mean in zip(clusters, means):
        if len(cluster) < min_support:
            continue
        x = min(max(int(math.floor(mean[0] + 0.5)), 0), width - 1)
        y = min(max(int(math.floor(mean[1] + 0.5)), 0), height - 1)
        virtual.append(Peak(center_index, x, y, float(heat.data[center_index, y, x])))
    return sorted(virtual, key=lambda p: (p.y, p.x))


def assign_keypoints(
    peaks: list[Peak],
    centers: list[Peak],
    scale: TensorMap,
    joint_count: int | None = None,
    max_distance: float | None = None,
    virtual_from: int | None = None,
) -> tuple[list[PersonDetection], list[str]]:
    """Group joint peaks around centers; ``virtual_from`` marks centers at or after that index as virtual."""
    notes: list[str] = []
    if joint_count is None:
        if centers:
            joint_count = centers[0].joint_index
        else:
            joint_count = max((p.joint_index for p in peaks), default=-1) + 1
    joint_peaks = [p for p in peaks if p.joint_index != joint_count]
    if not centers:
        if joint_peaks:
            notes.append(f"{len(joint_peaks)} orphan peaks: no body centers detected")
        return [], notes

    regressed = regress_centers(joint_peaks, scale)
    persons = [
        PersonDetection(
            person_id=n,
            center=center,
            roots_2d=[None] * joint_count,
            center_detected=virtual_from is None or n < virtual_from,
        )
        for n, center in enumerate(centers)
    ]
    center_xy = np.array([c.position for c in centers], dtype=np.float64)

    categories = sorted({p.joint_index for p in joint_peaks})
    for j in categories:
        members = [m for m, p in enumerate(joint_peaks) if p.joint_index == j]
        points = np.array([regressed[m] for m in members])
        cost = np.linalg.norm(points[:, None, :] - center_xy[None, :, :], axis=-1)
        matched = set()
        for row, col in solve_assignment(cost):
            peak = joint_peaks[members[row]]
            if max_distance is not None and cost[row, col] > max_distance:
                notes.append(
                    f"joint {j} peak at {peak.position} rejected for person {col}: "
                    f"center distance {cost[row, col]:.2f} > {max_distance:.2f}"
                )
                continue
            persons[col].roots_2d[j] = peak
            matched.add(row)
        dropped = len(members) - len(matched)
        if dropped:
            notes.append(f"joint {j}: {dropped} surplus peak(s) left unassigned")
    return persons, notes


def lift_roots_3d(
    dets: list[PersonDetection],
    depth: TensorMap,
    apply_delta: bool = True,
    center_channel: int | None = None,
) -> list[PersonDetection]:
    def read(channel: int, point: tuple[int, int]) -> float:
        raw = float(sample_at(depth, point, (channel, channel + 1))[0])
        return delta_transform(raw) if apply_delta else raw

    lifted = []
    for det in dets:
        roots_3d: list[np.ndarray | None] = []
        for j, root in enumerate(det.roots_2d):
            if root is None:
                roots_3d.append(None)
            else:
                roots_3d.append(np.array([root.x, root.y, read(j, root.position)], dtype=np.float64))
        center_3d = None
        if center_channel is not None:
            if not 0 <= center_channel < depth.channels:
                raise BoundsError(f"center depth channel {center_channel} outside {depth.channels} planes")
            center_3d = np.array([det.center.x, det.center.y, read(center_channel, det.center.position)])
        lifted.append(replace(det, roots_2d=list(det.roots_2d), roots_3d=roots_3d, center_3d=center_3d))
    return lifted
