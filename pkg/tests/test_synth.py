import tempfile
import unittest
from pathlib import Path

import numpy as np

from app.core.maps import delta_transform_array
from app.core.skeleton import default_skeleton, parse_skeleton
from app.shared.contracts import CorruptionParams, DepthEncoding, RenderParams
from app.shared.errors import DomainError, GenerationError
from app.synth.corrupt import center_crowd_probability, corrupt_maps, covered_joints, plan_occlusion
from app.synth.render import draw_gaussian, encode_depth, nearest_fill, render_maps, supervision_mask
from app.synth.scene import (
    CROWD_INDEX_MAX,
    PersonPose,
    Scene,
    crowd_indices,
    format_scene,
    generate_scene,
    parse_scene,
    person_center,
    read_scene,
    write_scene,
)


class SceneTests(unittest.TestCase):
    def setUp(self) -> None:
        self.skeleton = default_skeleton()

    def test_same_seed_same_scene(self) -> None:
        a = generate_scene(self.skeleton, 3, seed=11)
        b = generate_scene(self.skeleton, 3, seed=11)
        self.assertEqual(format_scene(a), format_scene(b))
        c = generate_scene(self.skeleton, 3, seed=12)
        self.assertNotEqual(format_scene(a), format_scene(c))

    def test_persons_in_bounds_on_distinct_pixels(self) -> None:
        for seed in range(10):
            scene = generate_scene(self.skeleton, 3, seed=seed)
            self.assertEqual(scene.person_count, 3)
            pixels = set()
            for person in scene.persons:
                xs, ys, zs = person.joints.T
                self.assertTrue(np.all((xs >= 0) & (xs <= 127) & (ys >= 0) & (ys <= 127)))
                self.assertTrue(np.all(zs > 0))
                np.testing.assert_array_equal(xs, np.round(xs))
                np.testing.assert_array_equal(ys, np.round(ys))
                pixels |= {(int(x), int(y)) for x, y in zip(xs, ys)}
            self.assertEqual(len(pixels), 3 * self.skeleton.joint_count)

    def test_bone_lengths_follow_priors(self) -> None:
        prior = self.skeleton.prior
        for seed in range(10):
            scene = generate_scene(self.skeleton, 2, seed=seed)
            for person in scene.persons:
                for joint, parent in enumerate(self.skeleton.tree_parents):
                    if parent == -1:
                        continue
                    length = np.linalg.norm(person.joints[joint] - person.joints[parent]) * scene.mm_per_unit
                    self.assertLessEqual(abs(length / prior[parent, joint] - 1.0), 0.1 + 1e-9)

    def test_center_is_the_pelvis_pixel(self) -> None:
        scene = generate_scene(self.skeleton, 1, seed=4)
        person = scene.persons[0]
        cx, cy, cz = person_center(person, self.skeleton)
        self.assertEqual((cx, cy), (int(person.joints[14, 0]), int(person.joints[14, 1])))
        self.assertAlmostEqual(cz, person.joints[14, 2], places=9)

    def test_crowding_raises_crowd_index(self) -> None:
        means = []
        for crowding in (0.0, 0.25, 0.5, 0.75, 1.0):
            totals = []
            for seed in range(100):
                scene = generate_scene(self.skeleton, 2 + seed % 2, seed=seed, crowding=crowding)
                totals.append(np.mean(crowd_indices(scene.persons)))
            means.append(float(np.mean(totals)))
        self.assertEqual(means, sorted(means))
        self.assertLess(means[0], means[-1])

    def test_small_images_raise_unit_scale(self) -> None:
        small = generate_scene(self.skeleton, 1, image_size=(32, 32), seed=0)
        large = generate_scene(self.skeleton, 1, image_size=(128, 128), seed=0)
        self.assertGreater(small.mm_per_unit, large.mm_per_unit)
        self.assertEqual(large.mm_per_unit, 30.0)

    def test_argument_checks(self) -> None:
        with self.assertRaises(ValueError):
            generate_scene(self.skeleton, 0)
        with self.assertRaises(ValueError):
            generate_scene(self.skeleton, 1, image_size=(16, 64))
        with self.assertRaises(ValueError):
            generate_scene(self.skeleton, 1, crowding=1.5)

    def test_sub_pixel_bones_fail(self) -> None:
        tiny = parse_skeleton(
            "joint_count: 2\njoint_names: top base\nhead_top_index: 0\nmid_hip_index: 1\n"
            "tree_parents: 1 -1\ncenter_definition: 1 1\nbone_prior:\n  0 10\n  10 0\n"
        )
        with self.assertRaises(GenerationError):
            generate_scene(tiny, 1, seed=0)

    def test_text_round_trip(self) -> None:
        scene = generate_scene(self.skeleton, 2, seed=3)
        self.assertEqual(parse_scene(format_scene(scene)), scene)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "scene.txt"
            write_scene(path, scene)
            self.assertEqual(read_scene(path), scene)

    def test_parse_rejects_count_mismatch(self) -> None:
        text = format_scene(generate_scene(self.skeleton, 1, seed=0)).replace("persons: 1", "persons: 2")
        with self.assertRaises(ValueError):
            parse_scene(text)

    def test_generic_skeleton(self) -> None:
        skeleton = parse_skeleton(
            "joint_count: 3\njoint_names: top mid base\nhead_top_index: 0\nmid_hip_index: 2\n"
            "tree_parents: 1 2 -1\ncenter_definition: 2 2\nbone_prior:\n  0 300 600\n  300 0 300\n  600 300 0\n"
        )
        scene = generate_scene(skeleton, 2, seed=1)
        self.assertEqual(scene.persons[0].joint_count, 3)


class RenderTests(unittest.TestCase):
    def setUp(self) -> None:
        self.skeleton = default_skeleton()
        self.scene = generate_scene(self.skeleton, 3, seed=21)
        self.maps = render_maps(self.scene, self.skeleton)

    def test_heat_is_one_at_every_joint(self) -> None:
        heat = self.maps.heat.data
        for person in self.scene.persons:
            for j, (x, y, _) in enumerate(person.joints):
                self.assertEqual(float(heat[j, int(y), int(x)]), 1.0)
            cx, cy, _ = person_center(person, self.skeleton)
            self.assertEqual(float(heat[self.skeleton.joint_count, cy, cx]), 1.0)
        self.assertLessEqual(float(heat.max()), 1.0)

    def test_offsets_reach_every_joint(self) -> None:
        k = self.skeleton.joint_count
        offset = self.maps.offset3d.data
        for person in self.scene.persons:
            for i, (x, y, _) in enumerate(person.joints):
                vectors = offset[:, int(y), int(x)].astype(np.float64).reshape(k, 3)
                np.testing.assert_allclose(vectors + person.joints[i], person.joints, atol=1e-4)
                np.testing.assert_allclose(vectors[i], 0.0, atol=1e-6)

    def test_scale_points_at_center(self) -> None:
        for person in self.scene.persons:
            cx, cy, _ = person_center(person, self.skeleton)
            for x, y, _ in person.joints:
                x, y = int(x), int(y)
                self.assertEqual(float(self.maps.scale.data[0, y, x]), cx - x)
                self.assertEqual(float(self.maps.scale.data[1, y, x]), cy - y)

    def test_depth_encoding(self) -> None:
        raw = render_maps(self.scene, self.skeleton, RenderParams(depth_encoding=DepthEncoding.RAW))
        for person in self.scene.persons:
            for j, (x, y, z) in enumerate(person.joints):
                encoded = float(self.maps.depth.data[j, int(y), int(x)])
                self.assertAlmostEqual(float(delta_transform_array(encoded)), z, delta=1e-3)
                self.assertAlmostEqual(float(raw.depth.data[j, int(y), int(x)]), z, delta=1e-3)

    def test_depth_encoding_needs_positive_depth(self) -> None:
        with self.assertRaises(DomainError):
            encode_depth(np.array([120.0, 0.0]), DepthEncoding.DELTA_INVERSE)
        self.assertEqual(encode_depth(np.array([0.0]), DepthEncoding.RAW).tolist(), [0.0])
        self.assertEqual(encode_depth(np.array([1.0]), DepthEncoding.DELTA_INVERSE).tolist(), [0.0])

    def test_feature_channels(self) -> None:
        self.assertEqual(self.maps.feature.channels, 8)
        bare = render_maps(self.scene, self.skeleton, RenderParams(feature_channels=0))
        self.assertIsNone(bare.feature)

    def test_supervision_mask_covers_joints(self) -> None:
        mask = supervision_mask(self.scene, self.skeleton)
        for person in self.scene.persons:
            for x, y, _ in person.joints:
                self.assertTrue(mask[int(y), int(x)])
        self.assertFalse(mask.all())

    def test_nearest_fill_tie_goes_to_first(self) -> None:
        index = nearest_fill([(0, 0), (2, 0)], 3.0, 1, 3)
        self.assertEqual(index.tolist(), [[0, 0, 1]])

    def test_draw_gaussian_clips_at_border(self) -> None:
        plane = np.zeros((5, 5))
        draw_gaussian(plane, 0, 0, 1.0)
        self.assertEqual(plane[0, 0], 1.0)
        self.assertAlmostEqual(plane[0, 1], np.exp(-0.5))


class CorruptionTests(unittest.TestCase):
    def setUp(self) -> None:
        self.skeleton = default_skeleton()

    def test_zero_probability_is_identity(self) -> None:
        scene = generate_scene(self.skeleton, 3, seed=2)
        maps = render_maps(scene, self.skeleton)
        self.assertIs(corrupt_maps(maps, scene, self.skeleton, 0.0, seed=2), maps)

    def test_full_occlusion_silences_all_peaks(self) -> None:
        scene = generate_scene(self.skeleton, 3, seed=5)
        maps = corrupt_maps(render_maps(scene, self.skeleton), scene, self.skeleton, 1.0, seed=5)
        self.assertLess(float(maps.heat.data.max()), 0.5)

    def test_same_seed_same_corruption(self) -> None:
        scene = generate_scene(self.skeleton, 3, seed=8)
        maps = render_maps(scene, self.skeleton)
        a = corrupt_maps(maps, scene, self.skeleton, 0.3, seed=8)
        b = corrupt_maps(maps, scene, self.skeleton, 0.3, seed=8)
        self.assertEqual(a.heat, b.heat)
        self.assertEqual(a.offset3d, b.offset3d)
        plan_a, _ = plan_occlusion(scene, self.skeleton, 0.3, seed=8)
        plan_b, _ = plan_occlusion(scene, self.skeleton, 0.3, seed=8)
        np.testing.assert_array_equal(plan_a.occluded, plan_b.occluded)

    def test_occluded_joints_are_suppressed_and_silenced(self) -> None:
        scene = generate_scene(self.skeleton, 1, seed=3)
        maps = render_maps(scene, self.skeleton)
        plan, _ = plan_occlusion(scene, self.skeleton, 0.5, seed=3)
        corrupted = corrupt_maps(maps, scene, self.skeleton, 0.5, seed=3)
        person = scene.persons[0]
        self.assertTrue(plan.occluded.any())
        for j, (x, y, _) in enumerate(person.joints):
            value = float(corrupted.heat.data[j, int(y), int(x)])
            if plan.occluded[0, j]:
                self.assertAlmostEqual(value, 0.2, places=6)
                self.assertFalse(np.any(corrupted.offset3d.data[:, int(y), int(x)]))
                self.assertFalse(np.any(corrupted.scale.data[:, int(y), int(x)]))
            else:
                self.assertEqual(value, 1.0)
        hips_hidden = plan.occluded[0, [8, 11, 14]].any()
        self.assertEqual(bool(plan.center_suppressed[0]), bool(hips_hidden))

    def test_offset_drift_only_targets_occluded_joints(self) -> None:
        scene = generate_scene(self.skeleton, 1, seed=3)
        maps = render_maps(scene, self.skeleton)
        plan, _ = plan_occlusion(scene, self.skeleton, 0.5, seed=3)
        corrupted = corrupt_maps(maps, scene, self.skeleton, 0.5, seed=3)
        k = self.skeleton.joint_count
        person = scene.persons[0]
        for i, (x, y, _) in enumerate(person.joints):
            if plan.occluded[0, i]:
                continue
            before = maps.offset3d.data[:, int(y), int(x)].reshape(k, 3)
            after = corrupted.offset3d.data[:, int(y), int(x)].reshape(k, 3)
            for j in range(k):
                if plan.occluded[0, j]:
                    continue
                np.testing.assert_array_equal(before[j], after[j])

    def test_suppress_centers_flag(self) -> None:
        scene = generate_scene(self.skeleton, 2, seed=6)
        maps = render_maps(scene, self.skeleton)
        params = CorruptionParams(suppress_centers=True)
        corrupted = corrupt_maps(maps, scene, self.skeleton, 0.0, seed=6, params=params)
        center = corrupted.heat.data[self.skeleton.joint_count]
        self.assertAlmostEqual(float(center.max()), 0.2, places=6)
        np.testing.assert_array_equal(
            corrupted.heat.data[: self.skeleton.joint_count], maps.heat.data[: self.skeleton.joint_count]
        )

    def test_crowd_coverage(self) -> None:
        inner = PersonPose(np.array([[5.0, 5.0, 100.0], [6.0, 6.0, 100.0]]), np.ones(2, dtype=bool))
        outer = PersonPose(np.array([[0.0, 0.0, 100.0], [10.0, 10.0, 100.0]]), np.ones(2, dtype=bool))
        scene = Scene(32, 32, 0, 0.5, 4.0, 4.0, 30.0, (inner, outer))
        covered = covered_joints(scene)
        self.assertEqual(covered.tolist(), [[True, True], [False, False]])

    def test_center_follows_crowding(self) -> None:
        k = self.skeleton.joint_count
        ring = np.array([[0.0 if j % 2 == 0 else 60.0, 4.0 * j, 150.0] for j in range(k)])
        packed = np.array([[25.0 + j % 3, 25.0 + j // 3, 120.0] for j in range(k)])
        persons = (PersonPose(ring, np.ones(k, dtype=bool)), PersonPose(packed, np.ones(k, dtype=bool)))
        scene = Scene(64, 64, 0, 0.5, 4.0, 4.0, 30.0, persons)
        self.assertEqual(crowd_indices(persons), [CROWD_INDEX_MAX, 0.0])
        defining = [8, 11, 14]
        for seed in range(20):
            draws = np.random.default_rng(seed).random((2, k))
            independent = (draws < 0.3)[:, defining].any(axis=1)
            crowded, _ = plan_occlusion(scene, self.skeleton, 0.3, seed)
            self.assertTrue(crowded.center_suppressed[0])
            self.assertEqual(bool(crowded.center_suppressed[1]), bool(independent[1]))
            plain, _ = plan_occlusion(scene, self.skeleton, 0.3, seed, CorruptionParams(crowd_occlusion=False))
            self.assertEqual(plain.center_suppressed.tolist(), independent.tolist())

    def test_center_crowd_probability(self) -> None:
        np.testing.assert_allclose(center_crowd_probability([0.0, 0.35, 0.7], 0.3, 0.35), [0.0, 0.3, 1.0])
        self.assertEqual(center_crowd_probability([0.9], 0.0, 0.35).tolist(), [0.0])


if __name__ == "__main__":
    unittest.main()
