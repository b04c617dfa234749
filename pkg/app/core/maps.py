"""Dense per-image maps and the small tensor algebra the decoders need.

Values live in float32, channel-major, row-major (C, H, W). Arithmetic runs
in float64 and the result is stored back as float32. Coordinates are
x = column, y = row, origin top-left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from app.shared.errors import BoundsError, DomainError, ShapeError


class CombineOp(str, Enum):
    MUL = "mul"
    ADD = "add"


class Broadcast(str, Enum):
    NONE = "none"
    B_SINGLE_CHANNEL = "b_single_channel"


@dataclass(frozen=True, eq=False)
class TensorMap:
    data: np.ndarray

    def __post_init__(self) -> None:
        array = np.array(self.data, dtype=np.float32, copy=True)
        if array.ndim != 3:
            raise ShapeError(f"tensor map must be (C, H, W), got ndim={array.ndim}")
        if not np.all(np.isfinite(array)):
            raise DomainError("tensor map values must be finite")
        array.setflags(write=False)
        object.__setattr__(self, "data", array)

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> TensorMap:
        return cls(np.zeros((channels, height, width), dtype=np.float32))

    @classmethod
    def from_values(cls, channels: int, height: int, width: int, values: Sequence[float] | np.ndarray) -> TensorMap:
        flat = np.asarray(values, dtype=np.float32).ravel()
        if flat.size != channels * height * width:
            raise ShapeError(
                f"expected {channels * height * width} values for ({channels}, {height}, {width}), got {flat.size}"
            )
        return cls(flat.reshape(channels, height, width))

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    @property
    def width(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @property
    def values(self) -> np.ndarray:
        return self.data.ravel()

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class DataMapSet:
    heat: TensorMap
    scale: TensorMap
    depth: TensorMap
    offset3d: TensorMap
    feature: TensorMap | None = None

    def __post_init__(self) -> None:
        k = self.depth.channels
        expected = {
            "heat": (self.heat, k + 1),
            "scale": (self.scale, 2),
            "depth": (self.depth, k),
            "offset3d": (self.offset3d, 3 * k),
        }
        for name, (tensor, channels) in expected.items():
            if tensor.channels != channels:
                raise ShapeError(f"{name} must have {channels} channels for K={k}, got {tensor.channels}")
        planes = [self.heat, self.scale, self.depth, self.offset3d]
        if self.feature is not None:
            planes.append(self.feature)
        sizes = {(tensor.height, tensor.width) for tensor in planes}
        if len(sizes) != 1:
            raise ShapeError(f"all maps must share H x W, got {sorted(sizes)}")

    @property
    def joint_count(self) -> int:
        return self.depth.channels

    @property
    def height(self) -> int:
        return self.heat.height

    @property
    def width(self) -> int:
        return self.heat.width

    @property
    def center_channel(self) -> int:
        return self.joint_count


def sample_at(tensor: TensorMap, point: tuple[int, int], channel_range: tuple[int, int]) -> np.ndarray:
    x, y = point
    begin, end = channel_range
    if int(x) != x or int(y) != y:
        raise BoundsError(f"sample point {point} must be integral")
    if not tensor.contains(int(x), int(y)):
        raise BoundsError(f"point ({x}, {y}) outside {tensor.width}x{tensor.height} map")
    if not 0 <= begin <= end <= tensor.channels:
        raise BoundsError(f"channel range [{begin}, {end}) outside {tensor.channels} channels")
    return tensor.data[begin:end, int(y), int(x)].astype(np.float64)


def concat(tensors: Sequence[TensorMap]) -> TensorMap:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    sizes = {(t.height, t.width) for t in tensors}
    if len(sizes) != 1:
        raise ShapeError(f"concat inputs must share H x W, got {sorted(sizes)}")
    return TensorMap(np.concatenate([t.data for t in tensors], axis=0))


def split(tensor: TensorMap, counts: Sequence[int]) -> list[TensorMap]:
    if sum(counts) != tensor.channels or any(c < 0 for c in counts):
        raise ShapeError(f"cannot split {tensor.channels} channels into {list(counts)}")
    bounds = np.cumsum([0, *counts])
    return [TensorMap(tensor.data[bounds[i] : bounds[i + 1]]) for i in range(len(counts))]


def conv1x1(tensor: TensorMap, weights: np.ndarray, bias: np.ndarray) -> TensorMap:
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64).ravel()
    if w.ndim != 2 or w.shape[1] != tensor.channels:
        raise ShapeError(f"weights {w.shape} do not take {tensor.channels} input channels")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias of length {b.size} does not match {w.shape[0]} outputs")
    pixels = tensor.data.reshape(tensor.channels, -1).astype(np.float64)
    out = w @ pixels + b[:, None]
    return TensorMap(out.reshape(w.shape[0], tensor.height, tensor.width))


def ewise_combine(
    a: TensorMap,
    b: TensorMap,
    op: CombineOp | str = CombineOp.MUL,
    broadcast: Broadcast | str = Broadcast.NONE,
) -> TensorMap:
    op = CombineOp(op)
    broadcast = Broadcast(broadcast)
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeError(f"H x W mismatch: {a.shape} vs {b.shape}")
    if broadcast is Broadcast.B_SINGLE_CHANNEL:
        if b.channels != 1:
            raise ShapeError(f"broadcast operand must have 1 channel, got {b.channels}")
    elif a.channels != b.channels:
        raise ShapeError(f"channel mismatch: {a.channels} vs {b.channels}")
    left = a.data.astype(np.float64)
    right = b.data.astype(np.float64)
    out = left * right if op is CombineOp.MUL else left + right
    return TensorMap(out)


def delta_transform(x: float) -> float:
    # 1 / sigmoid(x) - 1 simplifies to exp(-x)
    try:
        return math.exp(-x)
    except OverflowError:
        return math.inf


def delta_inverse(d: float) -> float:
    if not d > 0:
        raise DomainError(f"delta inverse is defined for d > 0, got {d}")
    return -math.log(d)


def delta_transform_array(values: np.ndarray) -> np.ndarray:
    return np.exp(-np.asarray(values, dtype=np.float64))


def delta_inverse_array(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if np.any(values <= 0):
        raise DomainError("delta inverse is defined for d > 0 only")
    return -np.log(values)
