"""Seeded synthetic scenes and noisy grid predictions.

The simulator stands in for both imagery and a trained network: scenes are
exact geometry, and predictions are the rasterized ground truth perturbed by
a parametric noise model (Gaussian inliers, heavy-tailed outliers, confidence
jitter, label flips). Everything is driven by explicit seeds, so a (config,
noise, seed) triple fully determines the output bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, SamplingExhaustedError
from .geometry import (
    DEPTH_EPS,
    CameraIntrinsics,
    ObjectModel,
    Pose,
    model_from_mesh,
    rotation_from_quaternion,
)
from .grid import GridSpec, GroundTruthGrid, PredictionGrid, cell_centers, rasterize_ground_truth

DEFAULT_INTRINSICS = CameraIntrinsics(fx=800.0, fy=800.0, cx=304.0, cy=304.0, width=608, height=608)


@dataclass(frozen=True)
class Scene:
    """Camera intrinsics plus posed object instances."""

    intrinsics: CameraIntrinsics
    instances: tuple[tuple[int, Pose], ...]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))


@dataclass(frozen=True)
class NoiseModel:
    """Parametric stand-in for network prediction error.

    Offsets get Gaussian pixel noise (`outlier_sigma_px` with probability
    `outlier_rate`, else `inlier_sigma_px`); confidences are the exponential
    of the normalized residual norm (scaled by `tau`) plus uniform jitter,
    clamped to [0, 1]; cell labels flip to a random other class at
    `label_flip_rate`.
    """

    inlier_sigma_px: float = 3.0
    outlier_rate: float = 0.2
    outlier_sigma_px: float = 40.0
    confidence_jitter: float = 0.1
    label_flip_rate: float = 0.02
    tau: float = 1.0

    def __post_init__(self):
        if self.inlier_sigma_px < 0 or self.outlier_sigma_px < 0:
            raise ConfigError("noise sigmas must be >= 0")
        if not (0.0 <= self.outlier_rate <= 1.0 and 0.0 <= self.label_flip_rate <= 1.0):
            raise ConfigError("rates must lie in [0, 1]")
        if not (0.0 <= self.confidence_jitter < 1.0):
            raise ConfigError("confidence_jitter must lie in [0, 1)")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls(
            inlier_sigma_px=0.0,
            outlier_rate=0.0,
            outlier_sigma_px=0.0,
            confidence_jitter=0.0,
            label_flip_rate=0.0,
        )


@dataclass(frozen=True)
class SceneConfig:
    """Sampling ranges and detectability constraints for random scenes.

    Beyond the in-frustum requirement, instances are rejected until their
    projected centers are separated by `min_center_separation_px` and, when a
    grid spec is supplied, until every instance owns at least
    `min_visible_cells` grid cells after occlusion.
    """

    n_objects: tuple[int, int] = (3, 8)
    depth_range: tuple[float, float] = (1.2, 3.2)
    center_margin_px: float = 80.0
    min_center_separation_px: float = 60.0
    min_visible_cells: int = 4
    max_attempts: int = 1000

    def __post_init__(self):
        lo, hi = self.n_objects
        if not (1 <= lo <= hi):
            raise ConfigError("n_objects range must satisfy 1 <= lo <= hi")
        zlo, zhi = self.depth_range
        if not (0 < zlo <= zhi):
            raise ConfigError("depth_range must be positive and ordered")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")


def box_mesh(sx: float, sy: float, sz: float) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box centered at the origin: (vertices, triangle faces)."""
    h = np.array([sx, sy, sz]) / 2.0
    verts = np.array(
        [[x, y, z] for x in (-h[0], h[0]) for y in (-h[1], h[1]) for z in (-h[2], h[2])]
    )
    faces = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # -x
            [4, 6, 7], [4, 7, 5],  # +x
            [0, 4, 5], [0, 5, 1],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [0, 2, 6], [0, 6, 4],  # -z
            [1, 5, 7], [1, 7, 3],  # +z
        ]
    )
    return verts, faces


def default_model_library(points_per_model: int = 800) -> dict[int, ObjectModel]:
    """Five box-like models of varying aspect; model 4 is 4-fold symmetric."""
    rng = np.random.default_rng(20240817)
    shapes = [
        (1, "carton", (0.12, 0.18, 0.26), False),
        (2, "baton", (0.05, 0.07, 0.38), False),
        (3, "plate", (0.30, 0.22, 0.03), False),
        (4, "pillar", (0.10, 0.10, 0.24), True),
        (5, "cube", (0.16, 0.16, 0.16), False),
    ]
    library = {}
    for model_id, name, dims, symmetric in shapes:
        verts, faces = box_mesh(*dims)
        library[model_id] = model_from_mesh(
            model_id, name, verts, faces, count=points_per_model, symmetric=symmetric, rng=rng
        )
    return library


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix (random unit quaternion)."""
    q = rng.standard_normal(4)
    while np.linalg.norm(q) < 1e-12:
        q = rng.standard_normal(q.shape)
    return rotation_from_quaternion(q)


def _projected_center(pose: Pose, model: ObjectModel, k: CameraIntrinsics) -> np.ndarray:
    c = pose.apply(model.surface_points.mean(axis=0))
    return np.array([k.fx * c[0] / c[2] + k.cx, k.fy * c[1] / c[2] + k.cy])


def _sample_instance(rng, model, intrinsics, config, placed_centers):
    k = intrinsics
    for _ in range(config.max_attempts):
        z = rng.uniform(*config.depth_range)
        u = rng.uniform(config.center_margin_px, k.width - config.center_margin_px)
        v = rng.uniform(config.center_margin_px, k.height - config.center_margin_px)
        rot = random_rotation(rng)
        target = z * np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
        pose = Pose(rot, target - rot @ model.surface_points.mean(axis=0))
        cam = pose.apply(model.surface_points)
        if cam[:, 2].min() <= DEPTH_EPS:
            continue
        center = _projected_center(pose, model, k)
        if not (0 <= center[0] < k.width and 0 <= center[1] < k.height):
            continue
        if placed_centers and (
            np.linalg.norm(np.asarray(placed_centers) - center, axis=1).min()
            < config.min_center_separation_px
        ):
            continue
        return pose, center
    raise SamplingExhaustedError(
        f"could not place an instance after {config.max_attempts} attempts"
    )


def sample_scene(
    config: SceneConfig,
    models: dict[int, ObjectModel],
    intrinsics: CameraIntrinsics,
    seed,
    spec: GridSpec | None = None,
) -> Scene:
    """Sample a random scene satisfying the frustum and visibility constraints.

    With a grid spec supplied and `min_visible_cells` > 0, instances whose
    occluded footprint falls below the floor are re-posed (bounded rounds), so
    every instance in the returned scene is detectable.
    """
    if not models:
        raise DataError("model library is empty")
    rng = np.random.default_rng(seed)
    lo, hi = config.n_objects
    count = int(rng.integers(lo, hi + 1))
    ids = sorted(models)
    chosen = [ids[i] for i in rng.integers(0, len(ids), size=count)]

    poses: list[Pose] = []
    centers: list[np.ndarray] = []
    for model_id in chosen:
        pose, center = _sample_instance(rng, models[model_id], intrinsics, config, centers)
        poses.append(pose)
        centers.append(center)

    scene = Scene(intrinsics=intrinsics, instances=tuple(zip(chosen, poses)))
    if spec is None or config.min_visible_cells <= 0:
        return scene

    for _ in range(10 * count):
        gt = rasterize_ground_truth(scene, models, spec, intrinsics)
        visible = np.bincount(gt.instance_ids[gt.instance_ids >= 0], minlength=count)
        lacking = np.nonzero(visible < config.min_visible_cells)[0]
        if len(lacking) == 0:
            return scene
        idx = int(lacking[0])
        others = [c for j, c in enumerate(centers) if j != idx]
        pose, center = _sample_instance(rng, models[chosen[idx]], intrinsics, config, others)
        poses[idx] = pose
        centers[idx] = center
        scene = Scene(intrinsics=intrinsics, instances=tuple(zip(chosen, poses)))
    raise SamplingExhaustedError("could not make every instance visible")


def synthesize_predictions(
    scene: Scene,
    models: dict[int, ObjectModel],
    spec: GridSpec,
    intrinsics: CameraIntrinsics,
    noise: NoiseModel,
    seed,
) -> tuple[PredictionGrid, GroundTruthGrid]:
    """Rasterize ground truth and perturb it into a plausible prediction grid.

    Per foreground cell and keypoint: the true projection gets Gaussian pixel
    noise (outlier mixture), the confidence becomes
    clamp(exp(-tau*||residual||) + jitter, 0, 1), and the cell label flips to
    a random other class with the configured probability.
    """
    gt = rasterize_ground_truth(scene, models, spec, intrinsics)
    rng = np.random.default_rng(seed)
    s = spec.s
    n_kp = gt.n_keypoints
    n_classes = max(models) if models else 0

    offsets = np.zeros((s, s, n_kp, 2))
    confidences = np.zeros((s, s, n_kp))
    labels = gt.labels.copy()

    rows, cols = gt.foreground_indices()
    f = len(rows)
    if f:
        g = gt.keypoints_px[rows, cols]  # (F, N, 2)
        outlier = rng.random((f, n_kp)) < noise.outlier_rate
        sigma = np.where(outlier, noise.outlier_sigma_px, noise.inlier_sigma_px)
        pred = g + rng.standard_normal((f, n_kp, 2)) * sigma[:, :, None]
        centers = cell_centers(spec)[rows, cols][:, None, :]
        offsets[rows, cols] = (pred - centers) * spec.scale
        delta = (pred - g) * spec.scale
        target = np.exp(-noise.tau * np.linalg.norm(delta, axis=2))
        jitter = rng.uniform(-noise.confidence_jitter, noise.confidence_jitter, (f, n_kp))
        confidences[rows, cols] = np.clip(target + jitter, 0.0, 1.0)

        if noise.label_flip_rate > 0 and n_classes > 1:
            flip = rng.random(f) < noise.label_flip_rate
            alt = rng.integers(1, n_classes, size=f)
            current = labels[rows, cols]
            flipped = np.where(alt < current, alt, alt + 1)
            new_labels = np.where(flip, flipped, current)
            labels[rows, cols] = new_labels

    grid = PredictionGrid(spec=spec, labels=labels, offsets=offsets, confidences=confidences)
    return grid, gt
