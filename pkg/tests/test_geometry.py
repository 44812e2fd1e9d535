import math

import numpy as np
import pytest

from gridpose.errors import BehindCameraError, DataError, EmptyModelError
from gridpose.geometry import (
    CameraIntrinsics,
    Pose,
    add_metric,
    adds_metric,
    aabb_corners,
    max_pairwise_distance,
    model_from_mesh,
    model_from_points,
    project,
    project_points,
    rep_metric,
    rotation_geodesic,
)
from gridpose.simulator import box_mesh, random_rotation

from conftest import make_blob_model, make_random_pose, make_symmetric_model


def rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class TestProject:
    def test_optical_axis_point(self):
        k = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 10, 10)
        assert np.allclose(project((0, 0, 1), Pose.identity(), k), (0.0, 0.0))

    def test_plain_pinhole_values(self):
        k = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 200, 200)
        assert np.allclose(project((1, 2, 2), Pose.identity(), k), (100.0, 150.0))

    def test_matches_scalar_pinhole_oracle(self, intrinsics, rng):
        # Oracle: per-coordinate scalar evaluation of R p + t and the division.
        for _ in range(50):
            pose = make_random_pose(rng)
            p = rng.uniform(-0.2, 0.2, 3)
            r, t = pose.rotation, pose.translation
            cam = [sum(r[i][j] * p[j] for j in range(3)) + t[i] for i in range(3)]
            expected = (
                intrinsics.fx * cam[0] / cam[2] + intrinsics.cx,
                intrinsics.fy * cam[1] / cam[2] + intrinsics.cy,
            )
            assert np.allclose(project(p, pose, intrinsics), expected, atol=1e-9)

    def test_behind_camera_raises(self, intrinsics):
        with pytest.raises(BehindCameraError):
            project((0, 0, -1.0), Pose.identity(), intrinsics)
        with pytest.raises(BehindCameraError):
            project((0, 0, 0.0), Pose.identity(), intrinsics)


class TestPose:
    def test_round_trip_through_inverse(self, rng):
        for _ in range(50):
            pose = make_random_pose(rng)
            x = rng.uniform(-1, 1, (7, 3))
            back = pose.inverse().apply(pose.apply(x))
            assert np.abs(back - x).max() < 1e-9

    def test_compose_matches_sequential_apply(self, rng):
        a = make_random_pose(rng)
        b = make_random_pose(rng)
        x = rng.uniform(-1, 1, (5, 3))
        assert np.allclose(a.compose(b).apply(x), a.apply(b.apply(x)), atol=1e-12)

    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(DataError):
            Pose(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(DataError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


class TestRotationGeodesic:
    def test_identity_pair_is_zero(self):
        assert rotation_geodesic(np.eye(3), np.eye(3)) == 0.0

    def test_quarter_turn(self):
        assert abs(rotation_geodesic(np.eye(3), rot_z(math.pi / 2)) - math.pi / 2) < 1e-12

    def test_matches_quaternion_oracle(self, rng):
        # Oracle: angle from the scalar part of the relative quaternion.
        def to_quat(r):
            w = math.sqrt(max(0.0, 1.0 + np.trace(r))) / 2.0
            if w > 1e-9:
                return np.array(
                    [w, (r[2, 1] - r[1, 2]) / (4 * w), (r[0, 2] - r[2, 0]) / (4 * w), (r[1, 0] - r[0, 1]) / (4 * w)]
                )
            # fall back through the largest diagonal element
            i = int(np.argmax(np.diag(r)))
            j, k = (i + 1) % 3, (i + 2) % 3
            s = math.sqrt(max(0.0, 1.0 + r[i, i] - r[j, j] - r[k, k])) * 2.0
            q = np.zeros(4)
            q[0] = (r[k, j] - r[j, k]) / s
            q[i + 1] = s / 4.0
            q[j + 1] = (r[j, i] + r[i, j]) / s
            q[k + 1] = (r[k, i] + r[i, k]) / s
            return q

        for _ in range(100):
            ra = random_rotation(rng)
            rb = random_rotation(rng)
            q = to_quat(ra.T @ rb)
            expected = 2.0 * math.acos(min(1.0, abs(q[0])))
            assert abs(rotation_geodesic(ra, rb) - expected) < 1e-7

    def test_symmetry_and_triangle_inequality(self, rng):
        for _ in range(100):
            ra, rb, rc = (random_rotation(rng) for _ in range(3))
            dab = rotation_geodesic(ra, rb)
            assert abs(dab - rotation_geodesic(rb, ra)) < 1e-9
            assert dab <= rotation_geodesic(ra, rc) + rotation_geodesic(rc, rb) + 1e-9


class TestAddMetric:
    def test_equal_poses_give_zero(self, blob_model, rng):
        pose = make_random_pose(rng)
        assert add_metric(pose, pose, blob_model) == 0.0

    def test_pure_translation_equals_shift(self, blob_model, rng):
        pose = make_random_pose(rng)
        d = 0.37
        shifted = Pose(pose.rotation, pose.translation + np.array([d, 0.0, 0.0]))
        assert abs(add_metric(shifted, pose, blob_model) - d) < 1e-12

    def test_matches_per_point_loop_oracle(self, rng):
        model = make_blob_model(n_points=10, seed=3)
        est = make_random_pose(rng)
        gt = make_random_pose(rng)
        total = 0.0
        for p in model.surface_points:
            a = est.rotation @ p + est.translation
            b = gt.rotation @ p + gt.translation
            total += math.dist(a, b)
        assert abs(add_metric(est, gt, model) - total / 10) < 1e-12

    def test_invariant_to_point_reordering(self, rng):
        pts = rng.uniform(-0.1, 0.1, (40, 3))
        est, gt = make_random_pose(rng), make_random_pose(rng)
        m1 = model_from_points(1, "a", pts)
        m2 = model_from_points(1, "a", pts[::-1])
        assert abs(add_metric(est, gt, m1) - add_metric(est, gt, m2)) < 1e-12

    def test_empty_model_raises(self, rng):
        class Stub:
            surface_points = np.empty((0, 3))

        pose = make_random_pose(rng)
        with pytest.raises(EmptyModelError):
            add_metric(pose, pose, Stub())


class TestAddsMetric:
    def test_equal_poses_give_zero(self, blob_model, rng):
        pose = make_random_pose(rng)
        assert adds_metric(pose, pose, blob_model) == 0.0

    def test_never_exceeds_add(self, blob_model, rng):
        for _ in range(300):
            est, gt = make_random_pose(rng), make_random_pose(rng)
            assert adds_metric(est, gt, blob_model) <= add_metric(est, gt, blob_model) + 1e-12

    def test_symmetry_rotation_scores_zero(self, symmetric_model, rng):
        pose = make_random_pose(rng)
        rotated = pose.compose(Pose(rot_z(math.pi / 2), np.zeros(3)))
        # Brute-force nearest-neighbor oracle.
        a = rotated.apply(symmetric_model.surface_points)
        b = pose.apply(symmetric_model.surface_points)
        oracle = np.mean([np.linalg.norm(b - x, axis=1).min() for x in a])
        value = adds_metric(rotated, pose, symmetric_model)
        assert abs(value - oracle) < 1e-12
        assert value < 1e-9

    def test_matches_bruteforce_oracle_on_random_pair(self, rng):
        model = make_blob_model(n_points=25, seed=7)
        est, gt = make_random_pose(rng), make_random_pose(rng)
        a = est.apply(model.surface_points)
        b = gt.apply(model.surface_points)
        oracle = np.mean([np.linalg.norm(b - x, axis=1).min() for x in a])
        assert abs(adds_metric(est, gt, model) - oracle) < 1e-12


class TestRepMetric:
    def test_equal_poses_give_zero(self, blob_model, intrinsics, rng):
        pose = make_random_pose(rng, depth=(1.0, 2.0))
        assert rep_metric(pose, pose, blob_model, intrinsics, False) == 0.0

    def test_lateral_shift_approximates_fx_scaling(self, intrinsics, rng):
        # Oracle: numeric check against the projection itself; a small lateral
        # shift at depth z moves every projection by about fx * delta / z.
        model = make_blob_model(n_points=200, scale=0.02, seed=1)
        z = 2.0
        delta = 0.01
        gt = Pose(np.eye(3), np.array([0.0, 0.0, z]))
        est = Pose(np.eye(3), np.array([delta, 0.0, z]))
        value = rep_metric(est, gt, model, intrinsics, False)
        expected = intrinsics.fx * delta / z
        assert abs(value - expected) / expected < 0.02
        oracle = np.linalg.norm(
            project_points(model.surface_points, est, intrinsics)
            - project_points(model.surface_points, gt, intrinsics),
            axis=1,
        ).mean()
        assert abs(value - oracle) < 1e-12

    def test_symmetric_variant_lower_or_equal(self, symmetric_model, intrinsics, rng):
        for _ in range(20):
            est = make_random_pose(rng, depth=(1.5, 2.5), lateral=0.1)
            gt = make_random_pose(rng, depth=(1.5, 2.5), lateral=0.1)
            sym = rep_metric(est, gt, symmetric_model, intrinsics, True)
            plain = rep_metric(est, gt, symmetric_model, intrinsics, False)
            assert sym <= plain + 1e-12

    def test_behind_camera_propagates(self, blob_model, intrinsics):
        behind = Pose(np.eye(3), np.array([0.0, 0.0, -2.0]))
        front = Pose(np.eye(3), np.array([0.0, 0.0, 2.0]))
        with pytest.raises(BehindCameraError):
            rep_metric(behind, front, blob_model, intrinsics, False)


class TestObjectModel:
    def test_factory_builds_consistent_model(self, rng):
        pts = rng.uniform(-0.2, 0.2, (120, 3))
        model = model_from_points(3, "demo", pts)
        assert model.keypoints.shape == (8, 3)
        assert np.allclose(model.keypoints, aabb_corners(pts))
        assert abs(model.diameter - max_pairwise_distance(pts)) < 1e-12

    def test_rejects_stale_diameter(self, rng):
        pts = rng.uniform(-0.2, 0.2, (30, 3))
        model = model_from_points(1, "x", pts)
        from gridpose.geometry import ObjectModel

        with pytest.raises(DataError):
            ObjectModel(1, "x", model.keypoints, pts, model.diameter * 1.5, False)

    def test_rejects_wrong_keypoints(self, rng):
        pts = rng.uniform(-0.2, 0.2, (30, 3))
        model = model_from_points(1, "x", pts)
        with pytest.raises(DataError):
            from gridpose.geometry import ObjectModel

            ObjectModel(1, "x", model.keypoints + 0.01, pts, model.diameter, False)

    def test_mesh_sampling_covers_box_surface(self, rng):
        verts, faces = box_mesh(0.2, 0.3, 0.4)
        model = model_from_mesh(2, "box", verts, faces, count=600, rng=rng)
        pts = model.surface_points
        half = np.array([0.1, 0.15, 0.2])
        assert np.all(np.abs(pts) <= half + 1e-12)
        # every sampled point lies on some face plane
        on_face = np.isclose(np.abs(pts), half, atol=1e-9).any(axis=1)
        assert on_face.all()
        assert abs(model.diameter - np.linalg.norm(2 * half)) < 0.05
