import numpy as np
import pytest

from gridpose.errors import ConfigError, DataError, OutOfRangeError
from gridpose.geometry import Pose, model_from_points, project_points
from gridpose.grid import (
    GridSpec,
    KeypointPrediction,
    PredictionGrid,
    cell_center,
    cell_centers,
    decode_prediction,
    encode_offset,
    rasterize_ground_truth,
    residual,
)
from gridpose.simulator import Scene


def make_plate_model(model_id, half_w, half_h, z_half=0.001, n_side=40):
    """Dense, nearly flat plate: a grid of points at two thin z layers."""
    xs = np.linspace(-half_w, half_w, n_side)
    ys = np.linspace(-half_h, half_h, n_side)
    gx, gy = np.meshgrid(xs, ys)
    layer = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts = np.vstack(
        [
            np.column_stack([layer, np.full(len(layer), -z_half)]),
            np.column_stack([layer, np.full(len(layer), z_half)]),
        ]
    )
    return model_from_points(model_id, f"plate{model_id}", pts)


class TestGridSpec:
    def test_rejects_indivisible_image(self):
        with pytest.raises(ConfigError):
            GridSpec(s=7, image_w=608, image_h=608)

    def test_rejects_tiny_grid(self):
        with pytest.raises(ConfigError):
            GridSpec(s=1, image_w=8, image_h=8)


class TestCellCenter:
    def test_half_cell_offsets(self):
        spec = GridSpec(s=2, image_w=608, image_h=608)
        assert np.allclose(cell_center((0, 0), spec), (152.0, 152.0))
        assert np.allclose(cell_center((1, 1), spec), (456.0, 456.0))

    def test_all_centers_distinct_and_inside(self):
        spec = GridSpec(s=8, image_w=608, image_h=608)
        seen = set()
        for row in range(spec.s):
            for col in range(spec.s):
                c = cell_center((row, col), spec)
                assert 0 < c[0] < spec.image_w and 0 < c[1] < spec.image_h
                seen.add((float(c[0]), float(c[1])))
        assert len(seen) == spec.s**2
        # vectorized helper agrees with the scalar one
        grid = cell_centers(spec)
        assert np.allclose(grid[3, 5], cell_center((3, 5), spec))

    def test_out_of_range(self):
        spec = GridSpec(s=2, image_w=608, image_h=608)
        with pytest.raises(OutOfRangeError):
            cell_center((2, 0), spec)
        with pytest.raises(OutOfRangeError):
            cell_center((0, -1), spec)


class TestOffsetCodec:
    def test_center_encodes_to_zero(self):
        spec = GridSpec(s=4, image_w=608, image_h=608)
        g = cell_center((1, 2), spec)
        assert np.allclose(encode_offset(g, (1, 2), spec), (0.0, 0.0))

    def test_one_tenth_image_is_one_unit(self):
        spec = GridSpec(s=4, image_w=608, image_h=608)
        g = cell_center((0, 0), spec) + np.array([60.8, 0.0])
        assert np.allclose(encode_offset(g, (0, 0), spec), (1.0, 0.0))

    def test_round_trip_many_points(self, rng):
        spec = GridSpec(s=4, image_w=608, image_h=608)
        for _ in range(1000):
            idx = (int(rng.integers(0, 4)), int(rng.integers(0, 4)))
            g = rng.uniform(-500, 1100, 2)  # includes points far outside the image
            off = encode_offset(g, idx, spec)
            assert np.abs(decode_prediction(idx, off, spec) - g).max() < 1e-9

    def test_keypoint_prediction_wrapper_decodes(self):
        spec = GridSpec(s=4, image_w=608, image_h=608)
        kp = KeypointPrediction(offset=np.array([1.0, -0.5]), confidence=0.7)
        decoded = decode_prediction((2, 2), kp, spec)
        assert np.allclose(decoded, cell_center((2, 2), spec) + np.array([60.8, -30.4]))

    def test_norm_span_rescales_offsets_only(self, rng):
        g = rng.uniform(0, 608, 2)
        spec10 = GridSpec(s=4, image_w=608, image_h=608, norm_span=10.0)
        spec5 = GridSpec(s=4, image_w=608, image_h=608, norm_span=5.0)
        off10 = encode_offset(g, (1, 1), spec10)
        off5 = encode_offset(g, (1, 1), spec5)
        assert np.allclose(off10, 2.0 * off5)
        assert np.allclose(
            decode_prediction((1, 1), off10, spec10), decode_prediction((1, 1), off5, spec5)
        )


class TestResidual:
    def test_perfect_prediction_is_zero(self):
        spec = GridSpec(s=4, image_w=608, image_h=608)
        g = np.array([200.0, 330.0])
        kp = KeypointPrediction(offset=encode_offset(g, (1, 1), spec), confidence=1.0)
        assert np.allclose(residual(kp, (1, 1), g, spec), (0.0, 0.0))

    def test_unit_offset_from_center(self):
        spec = GridSpec(s=4, image_w=608, image_h=608)
        g = cell_center((0, 0), spec)
        kp = KeypointPrediction(offset=np.array([1.0, 0.0]), confidence=1.0)
        assert np.allclose(residual(kp, (0, 0), g, spec), (1.0, 0.0))

    def test_norm_converts_pixel_error_on_square_images(self, rng):
        spec = GridSpec(s=4, image_w=608, image_h=608)
        g = rng.uniform(0, 608, 2)
        pred_px = g + rng.normal(0, 10, 2)
        kp = KeypointPrediction(offset=encode_offset(pred_px, (2, 3), spec), confidence=0.5)
        delta = residual(kp, (2, 3), g, spec)
        pixel_err = np.linalg.norm(pred_px - g)
        assert abs(np.linalg.norm(delta) - pixel_err * spec.norm_span / spec.image_w) < 1e-9


class TestPredictionGridValidation:
    def test_rejects_bad_confidence(self):
        spec = GridSpec(s=2, image_w=8, image_h=8)
        with pytest.raises(DataError):
            PredictionGrid(
                spec=spec,
                labels=np.zeros((2, 2), dtype=int),
                offsets=np.zeros((2, 2, 1, 2)),
                confidences=np.full((2, 2, 1), 1.5),
            )


class TestRasterize:
    def test_empty_scene_all_background(self, intrinsics):
        spec = GridSpec(s=4, image_w=608, image_h=608)
        scene = Scene(intrinsics=intrinsics, instances=())
        gt = rasterize_ground_truth(scene, {}, spec, intrinsics)
        assert (gt.labels == 0).all()
        assert (gt.instance_ids == -1).all()

    def test_centered_plate_covers_exactly_four_cells(self, intrinsics):
        # Manual projection: a flat plate at depth 2 whose image is a square
        # slightly smaller than the central 2x2 cell block of a 4x4 grid.
        spec = GridSpec(s=4, image_w=608, image_h=608)
        z = 2.0
        half = (152.0 - 4.0) * z / intrinsics.fx  # pixels to meters at depth z
        model = make_plate_model(1, half, half)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, z]))
        scene = Scene(intrinsics=intrinsics, instances=((1, pose),))
        gt = rasterize_ground_truth(scene, {1: model}, spec, intrinsics)
        expected = np.zeros((4, 4), dtype=int)
        expected[1:3, 1:3] = 1
        assert (gt.labels == expected).all()
        kp = project_points(model.keypoints, pose, intrinsics)
        for row, col in ((1, 1), (1, 2), (2, 1), (2, 2)):
            assert (gt.keypoints_px[row, col] == kp).all()

    def test_nearer_object_wins_contested_cells(self, intrinsics):
        # z-buffer oracle: the near plate fills exactly cell (1, 1) at depth 1;
        # the far plate fills the whole central 2x2 block at depth 2. The
        # contested cell must go to the near plate, the rest to the far one.
        spec = GridSpec(s=4, image_w=608, image_h=608)
        near = make_plate_model(1, 72.0 / intrinsics.fx, 72.0 / intrinsics.fx)
        far = make_plate_model(2, 2.0 * 148.0 / intrinsics.fx, 2.0 * 148.0 / intrinsics.fx)
        near_pose = Pose(np.eye(3), np.array([-0.095, -0.095, 1.0]))  # cell (1, 1)
        far_pose = Pose(np.eye(3), np.array([0.0, 0.0, 2.0]))  # central block
        scene = Scene(intrinsics=intrinsics, instances=((1, near_pose), (2, far_pose)))
        gt = rasterize_ground_truth(scene, {1: near, 2: far}, spec, intrinsics)
        expected = np.zeros((4, 4), dtype=int)
        expected[1:3, 1:3] = 2
        expected[1, 1] = 1
        assert (gt.labels == expected).all()
        assert gt.instance_ids[1, 1] == 0
        assert gt.instance_ids[2, 2] == 1

    def test_deterministic(self, intrinsics, rng):
        from conftest import make_blob_model, make_random_pose

        spec = GridSpec(s=19, image_w=608, image_h=608)
        model = make_blob_model(n_points=300, scale=0.15)
        pose = make_random_pose(rng, depth=(1.5, 1.5), lateral=0.05)
        scene = Scene(intrinsics=intrinsics, instances=((1, pose),))
        a = rasterize_ground_truth(scene, {1: model}, spec, intrinsics)
        b = rasterize_ground_truth(scene, {1: model}, spec, intrinsics)
        assert (a.labels == b.labels).all()
        assert (a.instance_ids == b.instance_ids).all()
        assert (a.keypoints_px == b.keypoints_px).all()

    def test_wholly_behind_camera_instance_skipped(self, intrinsics):
        spec = GridSpec(s=4, image_w=608, image_h=608)
        model = make_plate_model(1, 0.1, 0.1)
        behind = Pose(np.eye(3), np.array([0.0, 0.0, -3.0]))
        scene = Scene(intrinsics=intrinsics, instances=((1, behind),))
        gt = rasterize_ground_truth(scene, {1: model}, spec, intrinsics)
        assert gt.skipped_instances == (0,)
        assert (gt.labels == 0).all()
