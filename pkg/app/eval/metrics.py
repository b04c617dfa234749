"""Pose metrics: MPJPE, PA-MPJPE, 3DPCK, AUC, Crowd Index, back-projection.

Poses live in pose units; ``unit_mm`` converts distances to millimeters.
``root_index`` defaults to the last joint, the mid-hip of the default
skeleton.
"""

from __future__ import annotations

from enum import Enum
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from app.decoding.records import Pose3D
from app.shared.errors import AlignmentError, DomainError, MetricError
from app.synth.scene import PersonPose, Scene, crowd_indices

AUC_THRESHOLDS_MM = np.arange(0.0, 151.0, 5.0)
PCK_THRESHOLD_MM = 150.0


class PckMode(str, Enum):
    REL = "rel"
    ABS = "abs"


def as_pose(person: PersonPose | Pose3D) -> Pose3D:
    if isinstance(person, Pose3D):
        return person
    return Pose3D(person.joints, person.visible)


def _root(pose: Pose3D, root_index: int | None) -> int:
    return pose.joint_count - 1 if root_index is None else root_index


def mpjpe(
    pred: Pose3D, gt: Pose3D, align_root: bool = False, root_index: int | None = None, unit_mm: float = 1.0
) -> float:
    if pred.joint_count != gt.joint_count:
        raise MetricError(f"joint count mismatch: {pred.joint_count} vs {gt.joint_count}")
    common = pred.valid & gt.valid
    if not common.any():
        raise MetricError("no jointly visible joints")
    p, g = pred.joints, gt.joints
    if align_root:
        root = _root(gt, root_index)
        if not (pred.valid[root] and gt.valid[root]):
            raise MetricError("root joint missing, cannot root-align")
        p = p - p[root]
        g = g - g[root]
    errors = np.linalg.norm(p[common] - g[common], axis=1)
    return float(errors.mean()) * unit_mm


def similarity_align(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Least-squares rotation, uniform scale and translation of ``source`` onto ``target``."""
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    s0, t0 = source - mu_s, target - mu_t
    for name, points in (("prediction", s0), ("ground truth", t0)):
        sv = np.linalg.svd(points, compute_uv=False)
        if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
            raise AlignmentError(f"{name} joints are collinear or coincident")
    u, sigma, vt = np.linalg.svd(s0.T @ t0)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    correction = np.diag([1.0, 1.0, d])
    rotation = vt.T @ correction @ u.T
    scale = float(np.trace(np.diag(sigma) @ correction)) / float((s0**2).sum())
    return scale * s0 @ rotation.T + mu_t


def pa_mpjpe(pred: Pose3D, gt: Pose3D, unit_mm: float = 1.0) -> float:
    if pred.joint_count != gt.joint_count:
        raise MetricError(f"joint count mismatch: {pred.joint_count} vs {gt.joint_count}")
    common = pred.valid & gt.valid
    if common.sum() < 3:
        raise AlignmentError(f"need 3 common joints for alignment, have {int(common.sum())}")
    aligned = similarity_align(pred.joints[common], gt.joints[common])
    return float(np.linalg.norm(aligned - gt.joints[common], axis=1).mean()) * unit_mm


def _anchor(pose: Pose3D, root: int) -> np.ndarray | None:
    if pose.valid[root]:
        return pose.joints[root]
    if pose.valid.any():
        return pose.joints[pose.valid].mean(axis=0)
    return None


def match_persons(
    preds: Sequence[Pose3D], gts: Sequence[Pose3D], root_index: int | None = None
) -> list[tuple[int, int]]:
    """Greedy (gt, pred) pairing by smallest root distance."""
    candidates = []
    for g, gt in enumerate(gts):
        gt_anchor = _anchor(gt, _root(gt, root_index))
        if gt_anchor is None:
            continue
        for p, pred in enumerate(preds):
            pred_anchor = _anchor(pred, _root(pred, root_index))
            if pred_anchor is not None:
                candidates.append((float(np.linalg.norm(pred_anchor - gt_anchor)), g, p))
    candidates.sort()
    used_gt: set[int] = set()
    used_pred: set[int] = set()
    pairs = []
    for _, g, p in candidates:
        if g not in used_gt and p not in used_pred:
            pairs.append((g, p))
            used_gt.add(g)
            used_pred.add(p)
    return sorted(pairs)


def joint_errors(
    preds: Sequence[Pose3D],
    gts: Sequence[Pose3D],
    mode: PckMode | str = PckMode.REL,
    root_index: int | None = None,
    unit_mm: float = 1.0,
    pairs: list[tuple[int, int]] | None = None,
) -> np.ndarray:
    """Per-GT-joint error in mm, shape (N_gt, K); inf where unmatched or missing, nan where not visible."""
    mode = PckMode(mode)
    if not gts:
        raise MetricError("empty ground-truth set")
    k = gts[0].joint_count
    if pairs is None:
        pairs = match_persons(preds, gts, root_index)
    errors = np.full((len(gts), k), np.inf)
    for g, p in pairs:
        gt, pred = gts[g], preds[p]
        root = _root(gt, root_index)
        if mode is PckMode.REL:
            if not (pred.valid[root] and gt.valid[root]):
                continue
            diff = (pred.joints - pred.joints[root]) - (gt.joints - gt.joints[root])
        else:
            diff = pred.joints - gt.joints
        dist = np.linalg.norm(diff, axis=1) * unit_mm
        errors[g] = np.where(pred.valid, dist, np.inf)
    visible = np.array([gt.valid for gt in gts])
    errors[~visible] = np.nan
    if not visible.any():
        raise MetricError("ground truth has no visible joints")
    return errors


def pck_from_errors(errors: np.ndarray, threshold_mm: float) -> float:
    visible = ~np.isnan(errors)
    hits = np.where(visible, np.nan_to_num(errors, nan=np.inf) <= threshold_mm, False)
    return 100.0 * float(hits.sum()) / float(visible.sum())


def pck3d(
    preds: Sequence[Pose3D],
    gts: Sequence[Pose3D],
    threshold_mm: float = PCK_THRESHOLD_MM,
    mode: PckMode | str = PckMode.REL,
    root_index: int | None = None,
    unit_mm: float = 1.0,
) -> float:
    return pck_from_errors(joint_errors(preds, gts, mode, root_index, unit_mm), threshold_mm)


def auc_from_errors(errors: np.ndarray, thresholds: Sequence[float] = AUC_THRESHOLDS_MM) -> float:
    grid = np.asarray(thresholds, dtype=np.float64)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise MetricError("AUC needs an increasing grid of at least two thresholds")
    curve = np.array([pck_from_errors(errors, t) for t in grid])
    return float(trapezoid(curve, grid)) / float(grid[-1] - grid[0]) / 100.0


def auc_pck(
    preds: Sequence[Pose3D],
    gts: Sequence[Pose3D],
    thresholds: Sequence[float] = AUC_THRESHOLDS_MM,
    mode: PckMode | str = PckMode.REL,
    root_index: int | None = None,
    unit_mm: float = 1.0,
) -> float:
    return auc_from_errors(joint_errors(preds, gts, mode, root_index, unit_mm), thresholds)


def crowd_index(people: Scene | Sequence[PersonPose | Pose3D]) -> list[float]:
    persons = [as_pose(p) for p in (people.persons if isinstance(people, Scene) else people)]
    if not persons:
        raise MetricError("crowd index needs at least one person")
    return crowd_indices([PersonPose(p.joints, p.valid) for p in persons])


def back_project(point: Sequence[float], fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    x, y, z = (float(v) for v in point)
    if not z > 0:
        raise DomainError(f"depth must be positive, got {z}")
    if not (fx > 0 and fy > 0):
        raise DomainError(f"focal lengths must be positive, got fx={fx}, fy={fy}")
    return np.array([(x - cx) * z / fx, (y - cy) * z / fy, z])
