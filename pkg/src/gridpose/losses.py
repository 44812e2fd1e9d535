"""Training objective as pure numerical functions with analytic gradients.

Composition: ``total = seg + reg`` with ``reg = beta * pos + gamma_reg * conf``.

* seg  — focal loss over per-cell class probabilities, class-weighted.
* pos  — class-weighted L1 norm of the normalized keypoint residuals,
         foreground cells only.
* conf — class-weighted L1 gap between predicted confidences and the target
         ``exp(-tau * ||residual||_2)``. The target is treated as a constant
         when differentiating, so conf only grades the confidence head.

Gradients are exact subgradients of these sums (L1 subgradient at 0 is 0)
and are verified against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroError, ConfigError, DataError, NonFiniteError, SpecMismatchError
from .grid import GridSpec, GroundTruthGrid, PredictionGrid, cell_centers, residuals_grid

PROB_FLOOR = 1e-12
_SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class LossConfig:
    """Weights and shape parameters of the objective."""

    tau: float = 1.0
    beta: float = 1.0
    gamma_reg: float = 1.0
    focal_gamma: float = 2.0
    class_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.beta < 0 or self.gamma_reg < 0 or self.focal_gamma < 0:
            raise ConfigError("beta, gamma_reg, focal_gamma must be non-negative")
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))
        if any(w <= 0 for w in self.class_weights):
            raise ConfigError("class_weights must all be positive")


@dataclass
class LossReport:
    """Loss components plus gradients of the total wrt each prediction head."""

    total: float
    seg: float
    pos: float
    conf: float
    reg: float
    gradients: dict[str, np.ndarray] = field(default_factory=dict)
    clamped_cells: int = 0


def median_frequency_weights(pixel_counts) -> np.ndarray:
    """Class weights: median of the nonzero class frequencies over each frequency.

    Zero-count classes are excluded from the median and get weight 0.
    """
    counts = np.asarray(pixel_counts, dtype=float)
    if np.any(counts < 0):
        raise DataError("pixel counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise AllZeroError("all class counts are zero")
    freqs = counts / total
    present = freqs > 0
    med = np.median(freqs[present])
    weights = np.zeros_like(freqs)
    weights[present] = med / freqs[present]
    return weights


def focal_loss(class_probs, labels, weights, focal_gamma: float, validate: bool = True):
    """Summed focal loss over cells plus its gradient wrt the probabilities.

    Args:
        class_probs: (..., C) probabilities on the simplex.
        labels: (...) integer targets in [0, C).
        weights: (C,) per-class weights.
        focal_gamma: focusing exponent; 0 reduces to weighted cross-entropy.
        validate: check the simplex constraint (disable for finite-difference
            probes, which perturb single coordinates).

    Returns:
        (loss, grad, clamped) where grad has the shape of class_probs and
        clamped counts cells whose target probability hit the 1e-12 floor.
    """
    probs = np.asarray(class_probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    weights = np.asarray(weights, dtype=float)
    if probs.shape[:-1] != labels.shape:
        raise DataError("class_probs and labels shapes disagree")
    if validate:
        if np.any(probs < -_SIMPLEX_TOL) or np.any(
            np.abs(probs.sum(axis=-1) - 1.0) > _SIMPLEX_TOL
        ):
            raise DataError("class probabilities are not on the simplex")

    p = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    clamped = int(np.count_nonzero(p <= PROB_FLOOR))
    p = np.clip(p, PROB_FLOOR, None)
    w = weights[labels]
    one_minus = 1.0 - p
    loss = float(np.sum(-w * one_minus**focal_gamma * np.log(p)))

    # dL/dp = w * gamma * (1-p)^(gamma-1) * log(p) - w * (1-p)^gamma / p,
    # with the first term dropped when gamma == 0 (and at p == 1, where its
    # limit is 0 for every gamma > 0).
    grad_p = -w * one_minus**focal_gamma / p
    if focal_gamma > 0:
        safe = one_minus > 0
        first = np.zeros_like(p)
        first[safe] = (
            w[safe] * focal_gamma * one_minus[safe] ** (focal_gamma - 1.0) * np.log(p[safe])
        )
        grad_p = grad_p + first
    grad = np.zeros_like(probs)
    np.put_along_axis(grad, labels[..., None], grad_p[..., None], axis=-1)
    return loss, grad, clamped


def _check_specs(grid: PredictionGrid, gt: GroundTruthGrid):
    if grid.spec != gt.spec:
        raise SpecMismatchError("prediction and ground-truth grids use different specs")
    if grid.n_keypoints != gt.n_keypoints:
        raise SpecMismatchError("grids disagree on keypoint count")


def loss_pos(grid: PredictionGrid, gt: GroundTruthGrid, weights):
    """Class-weighted L1 keypoint-position loss over foreground cells.

    Returns (loss, grad) with grad shaped like grid.offsets; background cells
    contribute nothing and get zero gradient.
    """
    _check_specs(grid, gt)
    weights = np.asarray(weights, dtype=float)
    fg = gt.labels > 0
    delta = residuals_grid(grid, gt)
    w = np.where(fg, weights[gt.labels], 0.0)
    loss = float(np.sum(w[:, :, None, None] * np.abs(delta) * fg[:, :, None, None]))
    grad = w[:, :, None, None] * np.sign(delta) * fg[:, :, None, None]
    return loss, grad


def confidence_targets(grid: PredictionGrid, gt: GroundTruthGrid, tau: float) -> np.ndarray:
    """Per-keypoint confidence targets exp(-tau * ||residual||_2), shape (S, S, N)."""
    delta = residuals_grid(grid, gt)
    return np.exp(-tau * np.linalg.norm(delta, axis=3))


def loss_conf(grid: PredictionGrid, gt: GroundTruthGrid, tau: float, weights):
    """Class-weighted L1 confidence-calibration loss over foreground cells.

    The exponential target is a constant for differentiation; the returned
    gradient is wrt the confidences only.
    """
    _check_specs(grid, gt)
    weights = np.asarray(weights, dtype=float)
    fg = gt.labels > 0
    target = confidence_targets(grid, gt, tau)
    diff = grid.confidences - target
    w = np.where(fg, weights[gt.labels], 0.0)
    loss = float(np.sum(w[:, :, None] * np.abs(diff) * fg[:, :, None]))
    grad = w[:, :, None] * np.sign(diff) * fg[:, :, None]
    return loss, grad


def _one_hot_probs(labels: np.ndarray, n_classes: int) -> np.ndarray:
    probs = np.zeros(labels.shape + (n_classes,))
    np.put_along_axis(probs, labels[..., None], 1.0, axis=-1)
    return probs


def loss_total(
    grid: PredictionGrid,
    gt: GroundTruthGrid,
    config: LossConfig,
    class_probs=None,
) -> LossReport:
    """Full objective: seg + beta*pos + gamma_reg*conf, with gradients.

    When `class_probs` is omitted, the grid's own class probabilities are
    used if present, else hard labels become (clamped) one-hot probabilities.
    """
    _check_specs(grid, gt)
    weights = np.asarray(config.class_weights, dtype=float)
    if weights.size == 0:
        raise ConfigError("loss config carries no class weights")
    if class_probs is None:
        class_probs = (
            grid.class_probs
            if grid.class_probs is not None
            else _one_hot_probs(grid.labels, len(weights))
        )
    class_probs = np.asarray(class_probs, dtype=float)
    if class_probs.shape[-1] != len(weights):
        raise ConfigError("class_weights length disagrees with probability dimension")

    seg, grad_probs, clamped = focal_loss(class_probs, gt.labels, weights, config.focal_gamma)
    pos, grad_off = loss_pos(grid, gt, weights)
    conf, grad_conf = loss_conf(grid, gt, config.tau, weights)
    reg = config.beta * pos + config.gamma_reg * conf
    return LossReport(
        total=seg + reg,
        seg=seg,
        pos=pos,
        conf=conf,
        reg=reg,
        gradients={
            "offsets": config.beta * grad_off,
            "confidences": config.gamma_reg * grad_conf,
            "class_probs": grad_probs,
        },
        clamped_cells=clamped,
    )


@dataclass
class GradCheckReport:
    loss: float
    max_rel_err: float
    worst_coordinate: int
    rel_errors: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    passed: bool | None = None


def grad_check(f, params, step: float = 1e-6, tolerance: float | None = None, mask=None) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    Args:
        f: callable mapping a flat parameter vector to (loss, gradient).
        params: probe point, flattened internally.
        step: central-difference step.
        tolerance: when given, the report's `passed` flag records whether
            max_rel_err stayed below it.
        mask: optional boolean vector; False coordinates are skipped (used to
            exclude probes adjacent to L1 kinks).

    Returns:
        GradCheckReport with per-coordinate relative errors; skipped
        coordinates report 0.

    Raises:
        NonFiniteError: if the loss is NaN/inf at any probe point.
    """
    if not step > 0:
        raise ConfigError("step must be positive")
    x0 = np.asarray(params, dtype=float).ravel().copy()
    loss0, grad0 = f(x0)
    grad0 = np.asarray(grad0, dtype=float).ravel()
    if not np.isfinite(loss0) or not np.all(np.isfinite(grad0)):
        raise NonFiniteError("loss or gradient non-finite at the probe point")
    if mask is None:
        mask = np.ones(x0.size, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).ravel()

    numeric = np.zeros_like(x0)
    for j in range(x0.size):
        if not mask[j]:
            continue
        x = x0.copy()
        x[j] = x0[j] + step
        f_plus, _ = f(x)
        x[j] = x0[j] - step
        f_minus, _ = f(x)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"loss non-finite near coordinate {j}")
        numeric[j] = (f_plus - f_minus) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(grad0), np.abs(numeric)), 1e-8)
    rel = np.where(mask, np.abs(grad0 - numeric) / denom, 0.0)
    worst = int(np.argmax(rel))
    max_rel = float(rel[worst])
    return GradCheckReport(
        loss=float(loss0),
        max_rel_err=max_rel,
        worst_coordinate=worst,
        rel_errors=rel,
        analytic=grad0,
        numeric=numeric,
        passed=None if tolerance is None else bool(max_rel < tolerance),
    )


# -- gradient-verification harness ------------------------------------------
#
# Shared by the test suite and the `gradcheck` CLI subcommand. Probe points
# within `kink_margin` steps of an L1 kink are masked out of the comparison,
# since central differences are meaningless across a kink.

KINK_MARGIN_STEPS = 10.0


def random_check_case(seed, s: int = 4, n_keypoints: int = 3, n_classes: int = 3):
    """A small random (grid, gt, weights) triple for gradient verification."""
    rng = np.random.default_rng(seed)
    spec = GridSpec(s=s, image_w=32 * s, image_h=32 * s)
    labels = rng.integers(0, n_classes + 1, size=(s, s))
    if not np.any(labels > 0):
        labels[0, 0] = 1
    fg = labels > 0
    keypoints_px = rng.uniform(0, 32 * s, size=(s, s, n_keypoints, 2))
    gt = GroundTruthGrid(
        spec=spec,
        labels=labels,
        instance_ids=np.where(fg, 0, -1),
        keypoints_px=keypoints_px,
    )
    centers = cell_centers(spec)
    true_offsets = (keypoints_px - centers[:, :, None, :]) * spec.scale
    offsets = true_offsets + rng.normal(0.0, 0.5, size=true_offsets.shape)
    confidences = rng.uniform(0.05, 0.95, size=(s, s, n_keypoints))
    grid = PredictionGrid(spec=spec, labels=labels.copy(), offsets=offsets, confidences=confidences)
    weights = rng.uniform(0.2, 3.0, size=n_classes + 1)
    return grid, gt, weights


def check_pos_gradient(grid, gt, weights, step: float = 1e-6) -> GradCheckReport:
    """Finite-difference check of loss_pos wrt the offsets, kinks masked."""
    base = grid.offsets.copy()
    delta = residuals_grid(grid, gt)
    mask = np.abs(delta).ravel() > KINK_MARGIN_STEPS * step

    def f(x):
        grid.offsets = x.reshape(base.shape)
        loss, grad = loss_pos(grid, gt, weights)
        return loss, grad.ravel()

    try:
        return grad_check(f, base, step=step, mask=mask)
    finally:
        grid.offsets = base


def check_conf_gradient(grid, gt, tau, weights, step: float = 1e-6) -> GradCheckReport:
    """Finite-difference check of loss_conf wrt the confidences, kinks masked."""
    base = grid.confidences.copy()
    target = confidence_targets(grid, gt, tau)
    mask = np.abs(base - target).ravel() > KINK_MARGIN_STEPS * step

    def f(x):
        grid.confidences = x.reshape(base.shape)
        loss, grad = loss_conf(grid, gt, tau, weights)
        return loss, grad.ravel()

    try:
        return grad_check(f, base, step=step, mask=mask)
    finally:
        grid.confidences = base


def check_focal_gradient(probs, labels, weights, focal_gamma, step: float = 1e-6) -> GradCheckReport:
    """Finite-difference check of focal_loss wrt the class probabilities."""
    probs = np.asarray(probs, dtype=float)

    def f(x):
        loss, grad, _ = focal_loss(
            x.reshape(probs.shape), labels, weights, focal_gamma, validate=False
        )
        return loss, grad.ravel()

    return grad_check(f, probs, step=step)
