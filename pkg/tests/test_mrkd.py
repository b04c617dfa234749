import itertools
import unittest

import numpy as np

from app.core.maps import TensorMap
from app.core.skeleton import default_skeleton
from app.decoding.mrkd import (
    Peak,
    assign_keypoints,
    extract_peaks,
    find_virtual_centers,
    lift_roots_3d,
    regress_centers,
    solve_assignment,
)
from app.synth.render import draw_gaussian, render_maps
from app.synth.scene import generate_scene, person_center


def scan_peaks(plane: np.ndarray, threshold: float) -> set[tuple[int, int]]:
    h, w = plane.shape
    found = set()
    for y in range(h):
        for x in range(w):
            value = plane[y, x]
            if value < threshold:
                continue
            ok = True
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if (dy, dx) == (0, 0):
                        continue
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < h and 0 <= nx < w):
                        continue
                    other = plane[ny, nx]
                    precedes = (dy, dx) < (0, 0)
                    if other > value or (precedes and other >= value):
                        ok = False
            if ok:
                found.add((x, y))
    return found


def brute_force_assignment(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    rows, cols = cost.shape
    best_total, best_pairs = None, None
    if rows <= cols:
        for perm in itertools.permutations(range(cols), rows):
            total = sum(cost[r, c] for r, c in enumerate(perm))
            if best_total is None or total < best_total:
                best_total, best_pairs = total, sorted(enumerate(perm))
    else:
        for perm in itertools.permutations(range(rows), cols):
            total = sum(cost[r, c] for c, r in enumerate(perm))
            if best_total is None or total < best_total:
                best_total, best_pairs = total, sorted((r, c) for c, r in enumerate(perm))
    return best_total, best_pairs


class PeakTests(unittest.TestCase):
    def test_single_bump(self) -> None:
        plane = np.zeros((64, 64))
        draw_gaussian(plane, 32, 32, 2.0)
        peaks = extract_peaks(TensorMap(plane[None]), 0.5)
        self.assertEqual(peaks, [Peak(0, 32, 32, 1.0)])

    def test_empty_map(self) -> None:
        self.assertEqual(extract_peaks(TensorMap.zeros(3, 8, 8), 0.5), [])

    def test_threshold_filters_weak_bump(self) -> None:
        plane = np.zeros((40, 40))
        draw_gaussian(plane, 10, 10, 2.0, 0.9)
        draw_gaussian(plane, 30, 25, 2.0, 0.4)
        peaks = extract_peaks(TensorMap(plane[None]), 0.5)
        self.assertEqual([p.position for p in peaks], [(10, 10)])
        self.assertEqual({p.position for p in peaks}, scan_peaks(plane.astype(np.float32), 0.5))

    def test_plateau_yields_one_peak(self) -> None:
        plane = np.zeros((5, 5))
        plane[2, 1:4] = 0.8
        peaks = extract_peaks(TensorMap(plane[None]), 0.5)
        self.assertEqual([p.position for p in peaks], [(1, 2)])

    def test_random_maps_match_scan(self) -> None:
        rng = np.random.default_rng(0)
        for _ in range(40):
            h, w = int(rng.integers(3, 24)), int(rng.integers(3, 24))
            plane = rng.integers(0, 4, size=(h, w)) / 3.0
            tensor = TensorMap(plane[None])
            got = {p.position for p in extract_peaks(tensor, 0.3)}
            self.assertEqual(got, scan_peaks(tensor.data[0].astype(np.float64), 0.3))
            for peak in extract_peaks(tensor, 0.3):
                self.assertGreaterEqual(peak.confidence, 0.3)

    def test_threshold_range(self) -> None:
        with self.assertRaises(ValueError):
            extract_peaks(TensorMap.zeros(1, 2, 2), 1.5)


class RegressionTests(unittest.TestCase):
    def test_zero_scale_returns_peak(self) -> None:
        peaks = [Peak(0, 3, 4, 1.0), Peak(1, 5, 1, 0.9)]
        regressed = regress_centers(peaks, TensorMap.zeros(2, 8, 8))
        self.assertEqual([r.tolist() for r in regressed], [[3.0, 4.0], [5.0, 1.0]])

    def test_exact_field_hits_centers(self) -> None:
        skeleton = default_skeleton()
        scene = generate_scene(skeleton, 2, seed=4)
        maps = render_maps(scene, skeleton)
        for person in scene.persons:
            cx, cy, _ = person_center(person, skeleton)
            peaks = [Peak(j, int(x), int(y), 1.0) for j, (x, y, _) in enumerate(person.joints)]
            for point in regress_centers(peaks, maps.scale):
                self.assertEqual(point.tolist(), [cx, cy])

    def test_hand_built_two_person_field(self) -> None:
        scale = np.zeros((2, 6, 10))
        scale[0, :, :5] = 2.0 - np.arange(5)
        scale[0, :, 5:] = 7.0 - np.arange(5, 10)
        scale[1] = 3.0 - np.arange(6)[:, None]
        peaks = [Peak(0, x, y, 1.0) for y in range(6) for x in range(10)]
        for peak, point in zip(peaks, regress_centers(peaks, TensorMap(scale))):
            expected_x = 2.0 if peak.x < 5 else 7.0
            self.assertEqual(point.tolist(), [expected_x, 3.0])


class AssignmentTests(unittest.TestCase):
    def test_matches_brute_force_with_tie_rule(self) -> None:
        rng = np.random.default_rng(1)
        for _ in range(300):
            rows, cols = int(rng.integers(1, 5)), int(rng.integers(1, 6))
            cost = rng.integers(0, 3, size=(rows, cols)).astype(np.float64)
            pairs = solve_assignment(cost)
            best_total, best_pairs = brute_force_assignment(cost)
            self.assertEqual(sum(cost[r, c] for r, c in pairs), best_total)
            self.assertEqual(pairs, best_pairs)

    def test_continuous_costs(self) -> None:
        rng = np.random.default_rng(2)
        for _ in range(100):
            cost = rng.random((4, 4))
            best_total, _ = brute_force_assignment(cost)
            pairs = solve_assignment(cost)
            self.assertAlmostEqual(sum(cost[r, c] for r, c in pairs), best_total, places=12)

    def test_optimal_up_to_seven(self) -> None:
        rng = np.random.default_rng(3)
        perms = {}
        for _ in range(5040):
            rows, cols = int(rng.integers(1, 8)), int(rng.integers(1, 8))
            cost = rng.random((rows, cols)) * 10.0
            small, large = min(rows, cols), max(rows, cols)
            key = (small, large)
            if key not in perms:
                perms[key] = np.array(list(itertools.permutations(range(large), small)))
            square = cost if rows <= cols else cost.T
            best = square[np.arange(small), perms[key]].sum(axis=1).min()
            pairs = solve_assignment(cost)
            self.assertEqual(len(pairs), small)
            self.assertAlmostEqual(sum(cost[r, c] for r, c in pairs), best, places=9)

    def test_single_person_takes_all(self) -> None:
        scale = TensorMap.zeros(2, 10, 10)
        center = Peak(3, 5, 5, 1.0)
        peaks = [Peak(0, 5, 3, 0.9), Peak(1, 4, 5, 0.8), Peak(2, 6, 6, 0.7)]
        persons, notes = assign_keypoints(peaks, [center], scale, joint_count=3)
        self.assertEqual(len(persons), 1)
        self.assertEqual(persons[0].roots_2d, peaks)
        self.assertEqual(notes, [])

    def test_symmetric_tie_prefers_low_indices(self) -> None:
        scale = TensorMap.zeros(2, 20, 30)
        centers = [Peak(1, 10, 10, 1.0), Peak(1, 20, 10, 1.0)]
        peaks = [Peak(0, 15, 5, 0.9), Peak(0, 15, 15, 0.9)]
        persons, _ = assign_keypoints(peaks, centers, scale, joint_count=1)
        self.assertEqual(persons[0].roots_2d[0], peaks[0])
        self.assertEqual(persons[1].roots_2d[0], peaks[1])

    def test_two_persons_from_rendered_maps(self) -> None:
        skeleton = default_skeleton()
        scene = generate_scene(skeleton, 2, seed=9)
        maps = render_maps(scene, skeleton)
        peaks = extract_peaks(maps.heat, 0.5)
        k = skeleton.joint_count
        centers = [p for p in peaks if p.joint_index == k]
        persons, notes = assign_keypoints([p for p in peaks if p.joint_index != k], centers, maps.scale, k, 2.0)
        self.assertEqual(notes, [])
        self.assertEqual(len(persons), 2)
        for det in persons:
            matches = [
                person
                for person in scene.persons
                if person_center(person, skeleton)[:2] == det.center.position
            ]
            self.assertEqual(len(matches), 1)
            for j, root in enumerate(det.roots_2d):
                self.assertEqual(root.position, (int(matches[0].joints[j, 0]), int(matches[0].joints[j, 1])))

    def test_gate_rejects_far_peaks(self) -> None:
        scale = TensorMap.zeros(2, 20, 20)
        persons, notes = assign_keypoints([Peak(0, 15, 15, 1.0)], [Peak(1, 2, 2, 1.0)], scale, 1, 2.0)
        self.assertIsNone(persons[0].roots_2d[0])
        self.assertTrue(any("rejected" in note for note in notes))

    def test_no_centers(self) -> None:
        persons, notes = assign_keypoints([Peak(0, 1, 1, 1.0)], [], TensorMap.zeros(2, 4, 4), joint_count=1)
        self.assertEqual(persons, [])
        self.assertEqual(len(notes), 1)


class VirtualCenterTests(unittest.TestCase):
    def test_orphans_cluster_into_one_center(self) -> None:
        skeleton = default_skeleton()
        scene = generate_scene(skeleton, 1, seed=2)
        maps = render_maps(scene, skeleton)
        k = skeleton.joint_count
        joint_peaks = [p for p in extract_peaks(maps.heat, 0.5) if p.joint_index != k]
        virtual = find_virtual_centers(
            regress_centers(joint_peaks, maps.scale),
            [],
            maps.heat,
            claim_distance=2.0,
            radius=0.75,
        )
        cx, cy, _ = person_center(scene.persons[0], skeleton)
        self.assertEqual(virtual, [Peak(k, cx, cy, 1.0)])

    def test_claimed_points_are_skipped(self) -> None:
        regressed = [np.array([5.0, 5.0]), np.array([20.0, 5.0])]
        data = np.zeros((2, 32, 32))
        data[1, 5, 20] = 0.5
        virtual = find_virtual_centers(
            regressed, [Peak(1, 5, 6, 1.0)], TensorMap(data), claim_distance=2.0, radius=0.75
        )
        self.assertEqual(virtual, [Peak(1, 20, 5, 0.5)])

    def test_confidence_is_center_heat_at_pixel(self) -> None:
        regressed = [np.array([9.8, 3.2]), np.array([10.2, 2.9])]
        data = np.zeros((3, 16, 16))
        data[2, 3, 10] = 0.25
        data[0, 3, 10] = 1.0
        virtual = find_virtual_centers(regressed, [], TensorMap(data), 2.0, 0.75)
        self.assertEqual(virtual, [Peak(2, 10, 3, 0.25)])

    def test_min_support(self) -> None:
        regressed = [np.array([5.0, 5.0])]
        virtual = find_virtual_centers(regressed, [], TensorMap.zeros(2, 32, 32), 2.0, 0.75, min_support=2)
        self.assertEqual(virtual, [])


class LiftTests(unittest.TestCase):
    def _person(self) -> list:
        persons, _ = assign_keypoints(
            [Peak(0, 1, 1, 1.0), Peak(1, 2, 2, 1.0)], [Peak(2, 1, 2, 1.0)], TensorMap.zeros(2, 4, 4), 2
        )
        return persons

    def test_delta_applied(self) -> None:
        lifted = lift_roots_3d(self._person(), TensorMap.zeros(2, 4, 4), apply_delta=True, center_channel=1)
        self.assertEqual([r[2] for r in lifted[0].roots_3d], [1.0, 1.0])
        self.assertEqual(lifted[0].center_3d.tolist(), [1.0, 2.0, 1.0])

    def test_raw_pass_through(self) -> None:
        depth = TensorMap(np.full((2, 4, 4), 1000.0))
        lifted = lift_roots_3d(self._person(), depth, apply_delta=False)
        self.assertEqual(lifted[0].roots_3d[0].tolist(), [1.0, 1.0, 1000.0])
        self.assertIsNone(lifted[0].center_3d)

    def test_mixed_planes(self) -> None:
        rng = np.random.default_rng(3)
        depth = TensorMap(rng.normal(size=(2, 4, 4)))
        lifted = lift_roots_3d(self._person(), depth)
        for j, root in enumerate(lifted[0].roots_3d):
            x, y = int(root[0]), int(root[1])
            self.assertAlmostEqual(root[2], float(np.exp(-float(depth.data[j, y, x]))), places=12)


if __name__ == "__main__":
    unittest.main()
