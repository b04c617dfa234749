import importlib.util
import io
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path

from app.cli import run
from app.core.gmap import read_map_set
from app.decoding.sdar import load_weights

SCRIPT = Path(__file__).resolve().parents[1] / "tools" / "pack_weights.py"
spec = importlib.util.spec_from_file_location("pack_weights", SCRIPT)
pack_weights = importlib.util.module_from_spec(spec)
spec.loader.exec_module(pack_weights)


class PackWeightsTests(unittest.TestCase):
    def test_zero_weights_by_default(self) -> None:
        weights = pack_weights.build_weights(15, 8, None, 0.01)
        self.assertTrue(weights.is_zero())
        self.assertEqual((weights.joint_count, weights.feature_channels), (15, 8))

    def test_seeded_weights_are_reproducible(self) -> None:
        first = pack_weights.build_weights(3, 4, 9, 0.01)
        second = pack_weights.build_weights(3, 4, 9, 0.01)
        self.assertFalse(first.is_zero())
        self.assertEqual(first.to_tensors(), second.to_tensors())

    def test_rejects_empty_shapes(self) -> None:
        with self.assertRaises(ValueError):
            pack_weights.build_weights(0, 4, None, 0.01)

    def test_writes_file_and_refuses_overwrite(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "w.gwts"
            with redirect_stdout(io.StringIO()):
                self.assertEqual(pack_weights.main([str(out), "--joints", "2", "--channels", "3", "--seed", "1"]), 0)
            loaded = load_weights(out)
            self.assertEqual((loaded.joint_count, loaded.feature_channels), (2, 3))
            with self.assertRaises(FileExistsError):
                pack_weights.main([str(out)])

    def test_refine_with_random_weights_changes_maps(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            weights = root / "w.gwts"
            with redirect_stdout(io.StringIO()):
                pack_weights.main([str(weights), "--seed", "2", "--scale", "0.5"])
                self.assertEqual(run(["synth", "--seed", "1", "--out", str(root / "maps")]), 0)
                code = run(["refine", "--in", str(root / "maps"), "--out", str(root / "refined"), "--weights", str(weights)])
            self.assertEqual(code, 0)
            before, after = read_map_set(root / "maps"), read_map_set(root / "refined")
            self.assertNotEqual(before.scale, after.scale)


if __name__ == "__main__":
    unittest.main()
