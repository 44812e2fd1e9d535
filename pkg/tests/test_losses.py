import math

import numpy as np
import pytest

from gridpose.errors import AllZeroError, ConfigError, DataError, NonFiniteError, SpecMismatchError
from gridpose.grid import GridSpec, GroundTruthGrid, PredictionGrid, cell_centers
from gridpose.losses import (
    LossConfig,
    check_conf_gradient,
    check_focal_gradient,
    check_pos_gradient,
    confidence_targets,
    focal_loss,
    grad_check,
    loss_conf,
    loss_pos,
    loss_total,
    median_frequency_weights,
    random_check_case,
)


def perfect_pair(s=4, n_kp=3, n_classes=3, seed=0):
    """Grid/gt pair where every prediction is exact and confidences are 1."""
    rng = np.random.default_rng(seed)
    spec = GridSpec(s=s, image_w=32 * s, image_h=32 * s)
    labels = rng.integers(0, n_classes + 1, size=(s, s))
    labels[0, 0] = 1
    fg = labels > 0
    keypoints_px = rng.uniform(0, 32 * s, size=(s, s, n_kp, 2))
    gt = GroundTruthGrid(
        spec=spec, labels=labels, instance_ids=np.where(fg, 0, -1), keypoints_px=keypoints_px
    )
    centers = cell_centers(spec)
    offsets = (keypoints_px - centers[:, :, None, :]) * spec.scale
    grid = PredictionGrid(
        spec=spec,
        labels=labels.copy(),
        offsets=offsets,
        confidences=np.ones((s, s, n_kp)),
    )
    return grid, gt


class TestMedianFrequencyWeights:
    def test_uniform_counts(self):
        assert np.allclose(median_frequency_weights([100, 100, 100]), [1.0, 1.0, 1.0])

    def test_ratio_example(self):
        # freqs (0.9, 0.09, 0.01), median 0.09 -> weights (0.1, 1.0, 9.0)
        assert np.allclose(median_frequency_weights([900, 90, 10]), [0.1, 1.0, 9.0])

    def test_dominant_background_below_one(self, rng):
        for _ in range(20):
            counts = rng.integers(1, 50, size=4)
            counts[0] = counts.sum() * 3  # background dominates
            w = median_frequency_weights(counts)
            assert w[0] < 1.0

    def test_zero_count_class_excluded(self):
        w = median_frequency_weights([300, 0, 100, 100])
        assert w[1] == 0.0
        # median over present classes only: freqs (0.6, 0.2, 0.2) -> median 0.2
        assert np.allclose(w[[0, 2, 3]], [1 / 3, 1.0, 1.0])

    def test_all_zero_raises(self):
        with pytest.raises(AllZeroError):
            median_frequency_weights([0, 0, 0])


class TestFocalLoss:
    def test_certain_prediction_is_zero(self):
        probs = np.array([[0.0, 1.0, 0.0]])
        loss, grad, clamped = focal_loss(probs, np.array([1]), np.ones(3), 2.0)
        assert loss == 0.0
        assert clamped == 0

    def test_gamma_zero_is_weighted_cross_entropy(self, rng):
        probs = rng.dirichlet(np.ones(4), size=10)
        labels = rng.integers(0, 4, size=10)
        weights = rng.uniform(0.5, 2.0, 4)
        loss, _, _ = focal_loss(probs, labels, weights, 0.0)
        expected = sum(
            -weights[labels[i]] * math.log(probs[i, labels[i]]) for i in range(10)
        )
        assert abs(loss - expected) <= 1e-12 * abs(expected)

    def test_half_probability_value(self):
        loss, _, _ = focal_loss(np.array([[0.5, 0.5]]), np.array([0]), np.ones(2), 2.0)
        assert abs(loss - 0.25 * math.log(2.0)) < 1e-12

    def test_degenerate_probability_clamped_and_flagged(self):
        probs = np.array([[1.0, 0.0]])
        loss, _, clamped = focal_loss(probs, np.array([1]), np.ones(2), 2.0)
        assert clamped == 1
        assert np.isfinite(loss) and loss > 0

    def test_off_simplex_rejected(self):
        with pytest.raises(DataError):
            focal_loss(np.array([[0.7, 0.7]]), np.array([0]), np.ones(2), 2.0)


class TestLossPos:
    def test_perfect_predictions_zero(self):
        grid, gt = perfect_pair()
        loss, grad = loss_pos(grid, gt, np.ones(4))
        assert loss == 0.0
        assert (grad == 0.0).all()

    def test_single_cell_manual_value(self):
        # one foreground cell, one keypoint, residual (0.3, -0.4), weight 1
        spec = GridSpec(s=2, image_w=64, image_h=64)
        labels = np.array([[1, 0], [0, 0]])
        g = np.zeros((2, 2, 1, 2))
        g[0, 0, 0] = cell_centers(spec)[0, 0]  # true point at the cell center
        gt = GroundTruthGrid(
            spec=spec, labels=labels, instance_ids=np.where(labels > 0, 0, -1), keypoints_px=g
        )
        offsets = np.zeros((2, 2, 1, 2))
        offsets[0, 0, 0] = (0.3, -0.4)
        grid = PredictionGrid(
            spec=spec, labels=labels, offsets=offsets, confidences=np.ones((2, 2, 1))
        )
        loss, grad = loss_pos(grid, gt, np.ones(2))
        assert abs(loss - 0.7) < 1e-12
        assert np.allclose(grad[0, 0, 0], (1.0, -1.0))

    def test_matches_bruteforce_double_loop(self, rng):
        grid, gt, weights = random_check_case(17)
        loss, _ = loss_pos(grid, gt, weights)
        centers = cell_centers(grid.spec)
        total = 0.0
        for r in range(grid.spec.s):
            for c in range(grid.spec.s):
                if gt.labels[r, c] == 0:
                    continue
                w = weights[gt.labels[r, c]]
                for i in range(grid.n_keypoints):
                    enc = (gt.keypoints_px[r, c, i] - centers[r, c]) * grid.spec.scale
                    delta = grid.offsets[r, c, i] - enc
                    total += w * (abs(delta[0]) + abs(delta[1]))
        assert abs(loss - total) < 1e-9

    def test_spec_mismatch(self):
        grid, gt = perfect_pair(s=4)
        other_grid, _ = perfect_pair(s=2)
        with pytest.raises(SpecMismatchError):
            loss_pos(other_grid, gt, np.ones(4))


class TestLossConf:
    def test_calibrated_confidences_zero(self, rng):
        grid, gt, weights = random_check_case(5)
        grid.confidences = confidence_targets(grid, gt, tau=1.0)
        loss, grad = loss_conf(grid, gt, 1.0, weights)
        assert loss == 0.0

    def test_zero_residual_full_confidence_zero(self):
        grid, gt = perfect_pair()
        loss, _ = loss_conf(grid, gt, 1.0, np.ones(4))
        assert loss == 0.0

    def test_scalar_value(self):
        # tau=1, |delta|_2 = 1, s = 0 -> e^-1
        spec = GridSpec(s=2, image_w=64, image_h=64)
        labels = np.array([[1, 0], [0, 0]])
        g = np.zeros((2, 2, 1, 2))
        g[0, 0, 0] = cell_centers(spec)[0, 0]
        gt = GroundTruthGrid(
            spec=spec, labels=labels, instance_ids=np.where(labels > 0, 0, -1), keypoints_px=g
        )
        offsets = np.zeros((2, 2, 1, 2))
        offsets[0, 0, 0] = (1.0, 0.0)
        grid = PredictionGrid(
            spec=spec, labels=labels, offsets=offsets, confidences=np.zeros((2, 2, 1))
        )
        loss, _ = loss_conf(grid, gt, 1.0, np.ones(2))
        assert abs(loss - math.exp(-1.0)) < 1e-12

    def test_matches_bruteforce_double_loop(self, rng):
        grid, gt, weights = random_check_case(23)
        loss, _ = loss_conf(grid, gt, 1.3, weights)
        centers = cell_centers(grid.spec)
        total = 0.0
        for r in range(grid.spec.s):
            for c in range(grid.spec.s):
                if gt.labels[r, c] == 0:
                    continue
                w = weights[gt.labels[r, c]]
                for i in range(grid.n_keypoints):
                    enc = (gt.keypoints_px[r, c, i] - centers[r, c]) * grid.spec.scale
                    delta = grid.offsets[r, c, i] - enc
                    target = math.exp(-1.3 * math.hypot(*delta))
                    total += w * abs(grid.confidences[r, c, i] - target)
        assert abs(loss - total) < 1e-9

    def test_target_shape(self, rng):
        grid, gt, _ = random_check_case(31)
        targets = confidence_targets(grid, gt, tau=0.7)
        assert ((targets > 0) & (targets <= 1)).all()
        # strictly decreasing in the residual norm
        stronger = confidence_targets(grid, gt, tau=0.7)
        grid.offsets = grid.offsets * 3.0
        weaker = confidence_targets(grid, gt, tau=0.7)
        fg = gt.labels > 0
        norms_changed = ~np.isclose(stronger[fg], 1.0)
        assert (weaker[fg][norms_changed] < stronger[fg][norms_changed]).all()


class TestLossTotal:
    def test_perfect_grid_total_zero(self):
        grid, gt = perfect_pair()
        config = LossConfig(class_weights=(1.0,) * 4)
        report = loss_total(grid, gt, config)
        assert report.total == 0.0
        assert report.seg == report.pos == report.conf == 0.0

    def test_zero_regression_weights_leave_seg(self, rng):
        grid, gt, weights = random_check_case(3)
        config = LossConfig(beta=0.0, gamma_reg=0.0, class_weights=tuple(weights))
        report = loss_total(grid, gt, config)
        assert report.reg == 0.0
        assert report.total == report.seg

    def test_component_sum_and_invariants(self, rng):
        grid, gt, weights = random_check_case(9)
        config = LossConfig(beta=0.7, gamma_reg=1.9, class_weights=tuple(weights))
        report = loss_total(grid, gt, config)
        pos, _ = loss_pos(grid, gt, weights)
        conf, _ = loss_conf(grid, gt, config.tau, weights)
        assert abs(report.pos - pos) < 1e-12
        assert abs(report.conf - conf) < 1e-12
        assert abs(report.reg - (0.7 * pos + 1.9 * conf)) <= 1e-12 * max(report.reg, 1.0)
        assert abs(report.total - (report.seg + report.reg)) <= 1e-12 * max(report.total, 1.0)
        for key in ("offsets", "confidences", "class_probs"):
            assert key in report.gradients

    def test_weight_scaling_is_exact(self, rng):
        grid, gt, weights = random_check_case(13)
        lam = 2.5
        a = loss_total(grid, gt, LossConfig(class_weights=tuple(weights)))
        b = loss_total(grid, gt, LossConfig(class_weights=tuple(lam * w for w in weights)))
        for x, y in ((a.seg, b.seg), (a.pos, b.pos), (a.conf, b.conf)):
            assert abs(y - lam * x) <= 1e-12 * max(abs(y), 1.0)

    def test_losses_nonnegative(self, rng):
        for seed in range(10):
            grid, gt, weights = random_check_case(seed)
            report = loss_total(grid, gt, LossConfig(class_weights=tuple(weights)))
            assert report.total >= 0 and report.seg >= 0
            assert report.pos >= 0 and report.conf >= 0


class TestGradCheck:
    def test_linear_function_nearly_exact(self):
        slope = np.array([1.5, -2.0, 0.25])

        def f(x):
            return float(slope @ x), slope

        report = grad_check(f, np.array([0.3, -0.1, 0.7]), step=1e-4, tolerance=1e-10)
        assert report.max_rel_err <= 1e-10
        assert report.passed

    def test_loss_pos_gradient_far_from_kinks(self):
        grid, gt, weights = random_check_case(41)
        report = check_pos_gradient(grid, gt, weights, step=1e-6)
        assert report.max_rel_err < 1e-6  # piecewise linear: FD is exact

    def test_loss_conf_gradient(self):
        grid, gt, weights = random_check_case(43)
        report = check_conf_gradient(grid, gt, tau=1.0, weights=weights, step=1e-6)
        assert report.max_rel_err < 1e-4

    def test_focal_gradient(self, rng):
        probs = rng.uniform(0.05, 1.0, size=(8, 4))
        probs /= probs.sum(axis=1, keepdims=True)
        labels = rng.integers(0, 4, size=8)
        report = check_focal_gradient(probs, labels, np.ones(4), 2.0, step=1e-6)
        assert report.max_rel_err < 1e-6

    def test_non_finite_loss_raises(self):
        def f(x):
            return float("nan"), np.zeros_like(x)

        with pytest.raises(NonFiniteError):
            grad_check(f, np.zeros(2))

    def test_bad_step_rejected(self):
        with pytest.raises(ConfigError):
            grad_check(lambda x: (0.0, np.zeros_like(x)), np.zeros(2), step=0.0)
