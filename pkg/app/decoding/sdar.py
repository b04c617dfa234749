"""Scale and depth aware refinement of the initial maps."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.core.gmap import read_weights, write_weights
from app.core.maps import (
    Broadcast,
    CombineOp,
    DataMapSet,
    TensorMap,
    concat,
    conv1x1,
    ewise_combine,
    split,
)
from app.shared.contracts import GateSource, SdarConfig
from app.shared.errors import DomainError, MapFormatError, PreconditionError, ShapeError

logger = logging.getLogger(__name__)

LAYER_NAMES = ("conv_s", "conv_d", "proj_s", "proj_d", "conv_f")


@dataclass(frozen=True)
class Conv1x1:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        weight = np.asarray(self.weight, dtype=np.float32)
        bias = np.asarray(self.bias, dtype=np.float32).ravel()
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeError(f"layer weight {weight.shape} and bias {bias.shape} disagree")
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise DomainError("layer parameters must be finite")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def in_channels(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_channels(self) -> int:
        return int(self.weight.shape[0])

    def __call__(self, tensor: TensorMap) -> TensorMap:
        return conv1x1(tensor, self.weight, self.bias)


def _zeros(out_channels: int, in_channels: int) -> Conv1x1:
    return Conv1x1(np.zeros((out_channels, in_channels)), np.zeros(out_channels))


@dataclass(frozen=True)
class SdarWeights:
    conv_s: Conv1x1
    conv_d: Conv1x1
    proj_s: Conv1x1
    proj_d: Conv1x1
    conv_f: Conv1x1

    @classmethod
    def zeros(cls, joint_count: int, feature_channels: int) -> SdarWeights:
        k, c = joint_count, feature_channels
        return cls(
            conv_s=_zeros(2, k + 1 + 2),
            conv_d=_zeros(k, 3 * k + k),
            proj_s=_zeros(1, 2),
            proj_d=_zeros(1, k),
            conv_f=_zeros(k + 1 + 3 * k, c),
        )

    @classmethod
    def random(cls, joint_count: int, feature_channels: int, seed: int, scale: float = 0.01) -> SdarWeights:
        rng = np.random.default_rng(seed)
        template = cls.zeros(joint_count, feature_channels)
        layers = {}
        for name in LAYER_NAMES:
            layer: Conv1x1 = getattr(template, name)
            layers[name] = Conv1x1(
                rng.normal(0.0, scale, size=layer.weight.shape),
                rng.normal(0.0, scale, size=layer.bias.shape),
            )
        return cls(**layers)

    @property
    def joint_count(self) -> int:
        return self.proj_d.in_channels

    @property
    def feature_channels(self) -> int:
        return self.conv_f.in_channels

    def validate(self, joint_count: int, feature_channels: int) -> None:
        expected = SdarWeights.zeros(joint_count, feature_channels)
        for name in LAYER_NAMES:
            have = getattr(self, name).weight.shape
            want = getattr(expected, name).weight.shape
            if have != want:
                raise ShapeError(f"{name} is {have}, expected {want} for K={joint_count}, C={feature_channels}")

    def is_zero(self) -> bool:
        return all(
            not np.any(getattr(self, name).weight) and not np.any(getattr(self, name).bias) for name in LAYER_NAMES
        )

    def to_tensors(self) -> dict[str, TensorMap]:
        tensors: dict[str, TensorMap] = {}
        for name in LAYER_NAMES:
            layer: Conv1x1 = getattr(self, name)
            tensors[f"{name}.w"] = TensorMap(layer.weight[None, :, :])
            tensors[f"{name}.b"] = TensorMap(layer.bias[None, None, :])
        return tensors

    @classmethod
    def from_tensors(cls, tensors: dict[str, TensorMap]) -> SdarWeights:
        missing = [f"{n}.{p}" for n in LAYER_NAMES for p in ("w", "b") if f"{n}.{p}" not in tensors]
        if missing:
            raise MapFormatError(f"weights file lacks entries: {', '.join(missing)}", 0)
        unknown = sorted(set(tensors) - {f"{n}.{p}" for n in LAYER_NAMES for p in ("w", "b")})
        if unknown:
            logger.warning("Ignoring unknown weight entries: %s", ", ".join(unknown))
        layers = {}
        for name in LAYER_NAMES:
            weight, bias = tensors[f"{name}.w"], tensors[f"{name}.b"]
            if weight.channels != 1 or bias.channels != 1 or bias.height != 1:
                raise ShapeError(f"{name} must be stored as (1, out, in) and (1, 1, out)")
            layers[name] = Conv1x1(weight.data[0], bias.data[0, 0])
        return cls(**layers)


def load_weights(path: Path) -> SdarWeights:
    return SdarWeights.from_tensors(read_weights(path))


def save_weights(path: Path, weights: SdarWeights) -> None:
    write_weights(path, weights.to_tensors())


def refine_scale(heat_init: TensorMap, scale_init: TensorMap, w: SdarWeights) -> TensorMap:
    if scale_init.channels != 2:
        raise ShapeError(f"scale map must have 2 channels, got {scale_init.channels}")
    if heat_init.channels != w.conv_s.in_channels - 2:
        raise ShapeError(f"heat map has {heat_init.channels} channels, conv_s expects {w.conv_s.in_channels - 2}")
    return w.conv_s(concat([heat_init, scale_init]))


def refine_depth(offset_init: TensorMap, depth_init: TensorMap, w: SdarWeights) -> TensorMap:
    k = depth_init.channels
    if offset_init.channels != 3 * k:
        raise ShapeError(f"offset map must have {3 * k} channels, got {offset_init.channels}")
    if w.conv_d.in_channels != 4 * k:
        raise ShapeError(f"conv_d expects {w.conv_d.in_channels} inputs, maps give {4 * k}")
    return w.conv_d(concat([offset_init, depth_init]))


def refine_heat_offset(
    feature: TensorMap, scale_refined: TensorMap, depth_refined: TensorMap, w: SdarWeights
) -> tuple[TensorMap, TensorMap]:
    k = depth_refined.channels
    if scale_refined.channels != 2:
        raise ShapeError(f"scale map must have 2 channels, got {scale_refined.channels}")
    if feature.channels != w.conv_f.in_channels:
        raise ShapeError(f"feature map has {feature.channels} channels, conv_f expects {w.conv_f.in_channels}")
    if w.conv_f.out_channels != (k + 1) + 3 * k:
        raise ShapeError(f"conv_f produces {w.conv_f.out_channels} channels, need {4 * k + 1}")

    scale_gate = w.proj_s(scale_refined)
    depth_gate = w.proj_d(depth_refined)
    gated = ewise_combine(
        ewise_combine(feature, scale_gate, CombineOp.MUL, Broadcast.B_SINGLE_CHANNEL),
        ewise_combine(feature, depth_gate, CombineOp.MUL, Broadcast.B_SINGLE_CHANNEL),
        CombineOp.ADD,
    )
    heat_residual, offset_residual = split(w.conv_f(gated), [k + 1, 3 * k])
    return heat_residual, offset_residual


def _residual(initial: TensorMap, residual: TensorMap) -> TensorMap:
    return TensorMap(initial.data.astype(np.float64) + residual.data.astype(np.float64))


def sdar_apply(maps_init: DataMapSet, w: SdarWeights, config: SdarConfig | None = None) -> DataMapSet:
    config = config or SdarConfig()
    if maps_init.feature is None:
        raise PreconditionError("refinement needs the backbone feature map")
    w.validate(maps_init.joint_count, maps_init.feature.channels)

    scale_residual = refine_scale(maps_init.heat, maps_init.scale, w)
    depth_residual = refine_depth(maps_init.offset3d, maps_init.depth, w)
    scale = _residual(maps_init.scale, scale_residual)
    depth = _residual(maps_init.depth, depth_residual)

    if config.gate_source is GateSource.REFINED:
        gate_scale, gate_depth = scale, depth
    else:
        gate_scale, gate_depth = scale_residual, depth_residual
    heat_residual, offset_residual = refine_heat_offset(maps_init.feature, gate_scale, gate_depth, w)

    return DataMapSet(
        heat=_residual(maps_init.heat, heat_residual),
        scale=scale,
        depth=depth,
        offset3d=_residual(maps_init.offset3d, offset_residual),
        feature=maps_init.feature,
    )
