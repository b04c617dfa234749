"""Training objective, kept for verifying rendered maps.

L = L_h + alpha * L_s + beta * L_d + L_o, where L_h is the mean squared
error of both the initial and the refined heat maps, and the other terms are
L1 errors averaged over the supervised pixels only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from app.core.maps import DataMapSet, TensorMap, delta_transform_array
from app.shared.contracts import DepthEncoding
from app.shared.errors import ShapeError

DEFAULT_ALPHA = 0.1
DEFAULT_BETA = 0.1


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    heat: float
    scale: float
    depth: float
    offset: float


def _check(pred: TensorMap, gt: TensorMap, name: str) -> None:
    if pred.shape != gt.shape:
        raise ShapeError(f"{name}: prediction {pred.shape} vs ground truth {gt.shape}")


def mse(pred: TensorMap, gt: TensorMap) -> float:
    diff = pred.data.astype(np.float64) - gt.data.astype(np.float64)
    return float(np.mean(diff * diff))


def masked_l1(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        return 0.0
    diff = np.abs(pred[:, mask] - gt[:, mask])
    return float(diff.mean())


def total_loss(
    pred_init: DataMapSet,
    pred_refined: DataMapSet,
    gt: DataMapSet,
    mask: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    depth_encoding: DepthEncoding = DepthEncoding.DELTA_INVERSE,
) -> LossBreakdown:
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"loss weights must be positive, got alpha={alpha}, beta={beta}")
    for name in ("heat", "scale", "depth", "offset3d"):
        _check(getattr(pred_init, name), getattr(gt, name), name)
        _check(getattr(pred_refined, name), getattr(gt, name), name)
    if mask.shape != (gt.height, gt.width):
        raise ShapeError(f"mask {mask.shape} does not match maps {(gt.height, gt.width)}")
    mask = mask.astype(bool)

    heat = mse(pred_init.heat, gt.heat) + mse(pred_refined.heat, gt.heat)
    scale = masked_l1(pred_refined.scale.data.astype(np.float64), gt.scale.data.astype(np.float64), mask)
    depth_pred = delta_transform_array(pred_refined.depth.data)
    depth_gt = gt.depth.data.astype(np.float64)
    if depth_encoding is DepthEncoding.DELTA_INVERSE:
        depth_gt = delta_transform_array(depth_gt)
    depth = masked_l1(depth_pred, depth_gt, mask)
    offset = masked_l1(pred_refined.offset3d.data.astype(np.float64), gt.offset3d.data.astype(np.float64), mask)

    total = heat + alpha * scale + beta * depth + offset
    return LossBreakdown(total=total, heat=heat, scale=scale, depth=depth, offset=offset)
