"""GMAP tensor files and the named-tensor weights container.

GMAP layout: b"GMAP", u16 version, u32 channels, u32 height, u32 width, then
channels*height*width float32 values, all little-endian, channel-major.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from app.core.maps import DataMapSet, TensorMap
from app.shared.errors import MapFormatError

GMAP_MAGIC = b"GMAP"
GMAP_VERSION = 1
WEIGHTS_MAGIC = b"GWTS"
WEIGHTS_VERSION = 1

_HEADER = struct.Struct("<4sHIII")
_WEIGHTS_HEADER = struct.Struct("<4sHI")
_NAME_LENGTH = struct.Struct("<H")
_BLOB_LENGTH = struct.Struct("<Q")
_U32_MAX = 2**32 - 1


def encode_gmap(tensor: TensorMap) -> bytes:
    channels, height, width = tensor.shape
    for dim in (channels, height, width):
        if dim > _U32_MAX:
            raise MapFormatError(f"dimension {dim} does not fit in u32", 0)
    if not np.all(np.isfinite(tensor.data)):
        raise MapFormatError("refusing to write non-finite values", _HEADER.size)
    payload = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    return _HEADER.pack(GMAP_MAGIC, GMAP_VERSION, channels, height, width) + payload


def decode_gmap(blob: bytes, base_offset: int = 0) -> TensorMap:
    if len(blob) < _HEADER.size:
        raise MapFormatError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(blob)}", base_offset + len(blob)
        )
    magic, version, channels, height, width = _HEADER.unpack_from(blob, 0)
    if magic != GMAP_MAGIC:
        raise MapFormatError(f"bad magic {magic!r}", base_offset)
    if version != GMAP_VERSION:
        raise MapFormatError(f"unsupported version {version}", base_offset + 4)
    count = channels * height * width
    expected = count * 4
    actual = len(blob) - _HEADER.size
    if actual != expected:
        raise MapFormatError(
            f"payload length mismatch: expected {expected} bytes for ({channels}, {height}, {width}), got {actual}",
            base_offset + _HEADER.size + min(actual, expected),
        )
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise MapFormatError("non-finite value in payload", base_offset + _HEADER.size + int(bad[0]) * 4)
    return TensorMap(values.astype(np.float32).reshape(channels, height, width))


def _atomic_write(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def write_gmap(path: Path, tensor: TensorMap) -> None:
    _atomic_write(Path(path), encode_gmap(tensor))


def read_gmap(path: Path) -> TensorMap:
    return decode_gmap(Path(path).read_bytes())


def encode_weights(tensors: dict[str, TensorMap]) -> bytes:
    parts = [_WEIGHTS_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, len(tensors))]
    for name in sorted(tensors):
        raw_name = name.encode("utf-8")
        blob = encode_gmap(tensors[name])
        parts.append(_NAME_LENGTH.pack(len(raw_name)))
        parts.append(raw_name)
        parts.append(_BLOB_LENGTH.pack(len(blob)))
        parts.append(blob)
    return b"".join(parts)


def decode_weights(blob: bytes) -> dict[str, TensorMap]:
    if len(blob) < _WEIGHTS_HEADER.size:
        raise MapFormatError("truncated weights header", len(blob))
    magic, version, count = _WEIGHTS_HEADER.unpack_from(blob, 0)
    if magic != WEIGHTS_MAGIC:
        raise MapFormatError(f"bad weights magic {magic!r}", 0)
    if version != WEIGHTS_VERSION:
        raise MapFormatError(f"unsupported weights version {version}", 4)

    tensors: dict[str, TensorMap] = {}
    offset = _WEIGHTS_HEADER.size
    for _ in range(count):
        if offset + _NAME_LENGTH.size > len(blob):
            raise MapFormatError("truncated entry name length", offset)
        (name_length,) = _NAME_LENGTH.unpack_from(blob, offset)
        offset += _NAME_LENGTH.size
        if offset + name_length + _BLOB_LENGTH.size > len(blob):
            raise MapFormatError("truncated entry name", offset)
        try:
            name = blob[offset : offset + name_length].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MapFormatError("entry name is not UTF-8", offset) from exc
        offset += name_length
        (blob_length,) = _BLOB_LENGTH.unpack_from(blob, offset)
        offset += _BLOB_LENGTH.size
        if offset + blob_length > len(blob):
            raise MapFormatError(
                f"entry {name!r} declares {blob_length} bytes, {len(blob) - offset} remain", offset
            )
        if name in tensors:
            raise MapFormatError(f"duplicate entry {name!r}", offset)
        tensors[name] = decode_gmap(blob[offset : offset + blob_length], base_offset=offset)
        offset += blob_length
    if offset != len(blob):
        raise MapFormatError(f"{len(blob) - offset} trailing bytes after {count} entries", offset)
    return tensors


def write_weights(path: Path, tensors: dict[str, TensorMap]) -> None:
    _atomic_write(Path(path), encode_weights(tensors))


def read_weights(path: Path) -> dict[str, TensorMap]:
    return decode_weights(Path(path).read_bytes())


MAP_FILES = ("heat", "scale", "depth", "offset3d")
FEATURE_FILE = "feature"


def write_map_set(directory: Path, maps: DataMapSet) -> list[Path]:
    directory = Path(directory)
    written = []
    for name in MAP_FILES:
        path = directory / f"{name}.gmap"
        write_gmap(path, getattr(maps, name))
        written.append(path)
    if maps.feature is not None:
        path = directory / f"{FEATURE_FILE}.gmap"
        write_gmap(path, maps.feature)
        written.append(path)
    return written


def read_map_set(directory: Path) -> DataMapSet:
    """Load heat/scale/depth/offset3d and, when present, the feature map."""
    directory = Path(directory)
    tensors = {}
    for name in MAP_FILES:
        path = directory / f"{name}.gmap"
        if not path.exists():
            raise FileNotFoundError(f"missing map file: {path}")
        tensors[name] = read_gmap(path)
    feature_path = directory / f"{FEATURE_FILE}.gmap"
    feature = read_gmap(feature_path) if feature_path.exists() else None
    return DataMapSet(feature=feature, **tensors)
