import struct
import tempfile
import unittest
from pathlib import Path

import numpy as np

from app.core.gmap import (
    decode_gmap,
    decode_weights,
    encode_gmap,
    encode_weights,
    read_gmap,
    read_map_set,
    write_gmap,
    write_map_set,
)
from app.core.maps import DataMapSet, TensorMap
from app.shared.errors import MapFormatError


class GmapTests(unittest.TestCase):
    def test_file_round_trip_is_bit_exact(self) -> None:
        rng = np.random.default_rng(5)
        tensor = TensorMap(rng.normal(size=(3, 7, 5)))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "m.gmap"
            write_gmap(path, tensor)
            loaded = read_gmap(path)
        self.assertEqual(loaded, tensor)
        self.assertEqual(loaded.data.tobytes(), tensor.data.tobytes())

    def test_empty_file_fails_at_offset_zero(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "empty.gmap"
            path.write_bytes(b"")
            with self.assertRaises(MapFormatError) as ctx:
                read_gmap(path)
        self.assertEqual(ctx.exception.offset, 0)

    def test_payload_mismatch_names_sizes(self) -> None:
        blob = encode_gmap(TensorMap.zeros(2, 2, 2))
        with self.assertRaises(MapFormatError) as ctx:
            decode_gmap(blob[:-4])
        message = str(ctx.exception)
        self.assertIn("expected 32", message)
        self.assertIn("got 28", message)

    def test_bad_magic_and_version(self) -> None:
        blob = bytearray(encode_gmap(TensorMap.zeros(1, 1, 1)))
        blob[0:4] = b"XXXX"
        with self.assertRaises(MapFormatError) as ctx:
            decode_gmap(bytes(blob))
        self.assertEqual(ctx.exception.offset, 0)
        blob = bytearray(encode_gmap(TensorMap.zeros(1, 1, 1)))
        struct.pack_into("<H", blob, 4, 9)
        with self.assertRaises(MapFormatError) as ctx:
            decode_gmap(bytes(blob))
        self.assertEqual(ctx.exception.offset, 4)

    def test_nan_payload_reports_offset(self) -> None:
        blob = bytearray(encode_gmap(TensorMap.zeros(1, 1, 2)))
        struct.pack_into("<f", blob, len(blob) - 4, float("nan"))
        with self.assertRaises(MapFormatError) as ctx:
            decode_gmap(bytes(blob))
        self.assertEqual(ctx.exception.offset, len(blob) - 4)


class WeightsContainerTests(unittest.TestCase):
    def test_named_round_trip(self) -> None:
        tensors = {
            "b.w": TensorMap(np.arange(6).reshape(1, 2, 3)),
            "a.b": TensorMap(np.ones((1, 1, 2))),
        }
        decoded = decode_weights(encode_weights(tensors))
        self.assertEqual(sorted(decoded), ["a.b", "b.w"])
        for name, tensor in tensors.items():
            self.assertEqual(decoded[name], tensor)

    def test_truncated_entry(self) -> None:
        blob = encode_weights({"x": TensorMap.zeros(1, 2, 2)})
        with self.assertRaises(MapFormatError):
            decode_weights(blob[:-1])
        with self.assertRaises(MapFormatError):
            decode_weights(blob + b"\x00")


class MapSetIoTests(unittest.TestCase):
    def test_directory_round_trip(self) -> None:
        k, h, w = 1, 3, 4
        maps = DataMapSet(
            heat=TensorMap(np.full((k + 1, h, w), 0.5)),
            scale=TensorMap.zeros(2, h, w),
            depth=TensorMap(np.full((k, h, w), -5.0)),
            offset3d=TensorMap(np.arange(3 * k * h * w).reshape(3 * k, h, w)),
        )
        with tempfile.TemporaryDirectory() as tmp:
            written = write_map_set(Path(tmp), maps)
            self.assertEqual([p.name for p in written], ["heat.gmap", "scale.gmap", "depth.gmap", "offset3d.gmap"])
            loaded = read_map_set(Path(tmp))
        self.assertIsNone(loaded.feature)
        self.assertEqual(loaded.offset3d, maps.offset3d)
        self.assertEqual(loaded.depth, maps.depth)

    def test_missing_map_file(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(FileNotFoundError):
                read_map_set(Path(tmp))


if __name__ == "__main__":
    unittest.main()
