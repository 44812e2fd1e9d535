"""The S×S prediction grid: cell geometry, offset encoding, and ground-truth rasterization.

Offsets are stored in normalized units: the full image span maps to
``norm_span`` units per axis, so an offset of ``norm_span`` equals one image
width (or height). Offsets are unbounded — a cell may point far outside
itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, OutOfRangeError
from .geometry import DEPTH_EPS, project_points

DEFAULT_GRID_SIZE = 76
SUBSAMPLES = 4


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the prediction grid laid over the image."""

    s: int
    image_w: int
    image_h: int
    norm_span: float = 10.0

    def __post_init__(self):
        if self.s < 2:
            raise ConfigError(f"grid size must be >= 2, got {self.s}")
        if self.image_w % self.s or self.image_h % self.s:
            raise ConfigError(
                f"image size {self.image_w}x{self.image_h} not divisible by s={self.s}"
            )
        if not self.norm_span > 0:
            raise ConfigError("norm_span must be positive")

    @property
    def cell_w(self) -> float:
        return self.image_w / self.s

    @property
    def cell_h(self) -> float:
        return self.image_h / self.s

    @property
    def scale(self) -> np.ndarray:
        """Pixels-to-normalized-units factor per axis."""
        return np.array([self.norm_span / self.image_w, self.norm_span / self.image_h])


@dataclass(frozen=True)
class KeypointPrediction:
    """One cell's estimate for one keypoint: normalized offset + confidence."""

    offset: np.ndarray
    confidence: float

    def __post_init__(self):
        off = np.asarray(self.offset, dtype=float).reshape(2)
        if not (0.0 <= self.confidence <= 1.0):
            raise DataError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "offset", off)


@dataclass(frozen=True)
class CellPrediction:
    """Class label plus the N keypoint predictions of one grid cell."""

    class_label: int
    keypoints: tuple[KeypointPrediction, ...]


def _check_cell_arrays(spec, labels, n_keypoints):
    labels = np.asarray(labels)
    if labels.shape != (spec.s, spec.s):
        raise DataError(f"labels shape {labels.shape} != ({spec.s}, {spec.s})")
    if n_keypoints < 1:
        raise DataError("grids need at least one keypoint per cell")
    return labels.astype(int)


@dataclass
class PredictionGrid:
    """Array-backed S×S grid of per-cell class labels and keypoint predictions.

    `class_probs` is optional soft segmentation output (S, S, K+1); when
    absent, losses fall back to one-hot probabilities from `labels`.
    """

    spec: GridSpec
    labels: np.ndarray
    offsets: np.ndarray
    confidences: np.ndarray
    class_probs: np.ndarray | None = None

    def __post_init__(self):
        n = self.offsets.shape[2] if self.offsets.ndim == 4 else 0
        self.labels = _check_cell_arrays(self.spec, self.labels, n)
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.confidences = np.asarray(self.confidences, dtype=float)
        s = self.spec.s
        if self.offsets.shape != (s, s, n, 2):
            raise DataError(f"offsets shape {self.offsets.shape} != ({s},{s},{n},2)")
        if self.confidences.shape != (s, s, n):
            raise DataError(f"confidences shape {self.confidences.shape} != ({s},{s},{n})")
        if np.any(self.confidences < 0) or np.any(self.confidences > 1):
            raise DataError("confidences outside [0, 1]")

    @property
    def n_keypoints(self) -> int:
        return self.offsets.shape[2]

    def cell(self, row: int, col: int) -> CellPrediction:
        _check_index((row, col), self.spec)
        kps = tuple(
            KeypointPrediction(self.offsets[row, col, i], float(self.confidences[row, col, i]))
            for i in range(self.n_keypoints)
        )
        return CellPrediction(int(self.labels[row, col]), kps)

    def foreground_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Row/col arrays of foreground cells, in row-major order."""
        return np.nonzero(self.labels > 0)


@dataclass
class GroundTruthGrid:
    """Per-cell true class, owning instance, and projected keypoints (pixels)."""

    spec: GridSpec
    labels: np.ndarray
    instance_ids: np.ndarray
    keypoints_px: np.ndarray
    skipped_instances: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        n = self.keypoints_px.shape[2] if self.keypoints_px.ndim == 4 else 0
        self.labels = _check_cell_arrays(self.spec, self.labels, n)
        self.instance_ids = np.asarray(self.instance_ids).astype(int)
        self.keypoints_px = np.asarray(self.keypoints_px, dtype=float)
        s = self.spec.s
        if self.instance_ids.shape != (s, s):
            raise DataError("instance_ids shape mismatch")
        if self.keypoints_px.shape != (s, s, n, 2):
            raise DataError("keypoints_px shape mismatch")
        fg = self.labels > 0
        if np.any((self.instance_ids >= 0) != fg):
            raise DataError("instance ids inconsistent with foreground labels")
        if not np.all(np.isfinite(self.keypoints_px[fg])):
            raise DataError("foreground ground-truth keypoints must be finite")

    @property
    def n_keypoints(self) -> int:
        return self.keypoints_px.shape[2]

    def foreground_indices(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.labels > 0)


def _check_index(idx, spec: GridSpec):
    row, col = idx
    if not (0 <= row < spec.s and 0 <= col < spec.s):
        raise OutOfRangeError(f"cell index {idx} outside {spec.s}x{spec.s} grid")


def cell_center(idx, spec: GridSpec) -> np.ndarray:
    """Pixel coordinates of a cell center; idx is (row, col)."""
    _check_index(idx, spec)
    row, col = idx
    return np.array([(col + 0.5) * spec.cell_w, (row + 0.5) * spec.cell_h])


def cell_centers(spec: GridSpec) -> np.ndarray:
    """All cell centers as an (S, S, 2) array indexed [row, col]."""
    cols = (np.arange(spec.s) + 0.5) * spec.cell_w
    rows = (np.arange(spec.s) + 0.5) * spec.cell_h
    cx, cy = np.meshgrid(cols, rows)
    return np.stack([cx, cy], axis=2)


def encode_offset(point_px, idx, spec: GridSpec) -> np.ndarray:
    """Normalized offset of a pixel location relative to a cell center."""
    return (np.asarray(point_px, dtype=float) - cell_center(idx, spec)) * spec.scale


def decode_prediction(idx, kp, spec: GridSpec) -> np.ndarray:
    """Pixel location of a predicted keypoint; inverse of encode_offset.

    `kp` may be a KeypointPrediction or a bare normalized offset.
    """
    offset = kp.offset if hasattr(kp, "offset") else np.asarray(kp, dtype=float)
    return cell_center(idx, spec) + offset / spec.scale


def decode_grid(grid: PredictionGrid) -> np.ndarray:
    """Decode every cell's offsets to pixels at once: (S, S, N, 2)."""
    centers = cell_centers(grid.spec)
    return centers[:, :, None, :] + grid.offsets / grid.spec.scale


def residual(kp, idx, point_px, spec: GridSpec) -> np.ndarray:
    """Normalized-space error between a prediction and the true pixel location."""
    offset = kp.offset if hasattr(kp, "offset") else np.asarray(kp, dtype=float)
    return offset - encode_offset(point_px, idx, spec)


def residuals_grid(grid: PredictionGrid, gt: GroundTruthGrid) -> np.ndarray:
    """Vectorized residuals (S, S, N, 2) in normalized units; background rows are garbage."""
    centers = cell_centers(grid.spec)
    encoded_gt = (gt.keypoints_px - centers[:, :, None, :]) * grid.spec.scale
    return grid.offsets - encoded_gt


def rasterize_ground_truth(scene, models, spec: GridSpec, intrinsics, subsamples: int = SUBSAMPLES) -> GroundTruthGrid:
    """Label cells by the frontmost instance covering them and attach keypoints.

    Surface points of each instance are splatted into a sub-cell depth buffer
    (`subsamples`² bins per cell). Bins are z-buffered across instances; each
    cell then goes to the instance owning the most of its bins, with ties
    broken by the smaller minimum depth inside the cell. Cells no instance
    touches are background. Instances wholly behind the camera are skipped and
    listed in `skipped_instances`.
    """
    s = spec.s
    m = len(scene.instances)
    n_kp = 8 if m == 0 else len(models[scene.instances[0][0]].keypoints)
    empty = GroundTruthGrid(
        spec=spec,
        labels=np.zeros((s, s), dtype=int),
        instance_ids=np.full((s, s), -1, dtype=int),
        keypoints_px=np.zeros((s, s, n_kp, 2)),
    )
    if m == 0:
        return empty

    nb = s * subsamples
    bin_w = spec.image_w / nb
    bin_h = spec.image_h / nb
    depth = np.full((m, nb, nb), np.inf)
    class_ids = np.zeros(m, dtype=int)
    kp_px = np.zeros((m, n_kp, 2))
    skipped = []
    for i, (model_id, pose) in enumerate(scene.instances):
        model = models[model_id]
        class_ids[i] = model.id
        cam = pose.apply(model.surface_points)
        z = cam[:, 2]
        front = z > DEPTH_EPS
        if not front.any():
            skipped.append(i)
            continue
        u = intrinsics.fx * cam[front, 0] / z[front] + intrinsics.cx
        v = intrinsics.fy * cam[front, 1] / z[front] + intrinsics.cy
        ix = np.floor(u / bin_w).astype(int)
        iy = np.floor(v / bin_h).astype(int)
        ok = (ix >= 0) & (ix < nb) & (iy >= 0) & (iy < nb)
        np.minimum.at(depth[i], (iy[ok], ix[ok]), z[front][ok])
        kp_px[i] = project_points(model.keypoints, pose, intrinsics)

    nearest = depth.min(axis=0)
    owner = np.where(np.isfinite(nearest), np.argmin(depth, axis=0), -1)

    owner_cells = (
        owner.reshape(s, subsamples, s, subsamples).transpose(0, 2, 1, 3).reshape(s, s, -1)
    )
    votes = np.stack([(owner_cells == i).sum(axis=2) for i in range(m)], axis=2)
    depth_cells = (
        depth.reshape(m, s, subsamples, s, subsamples)
        .transpose(1, 3, 0, 2, 4)
        .reshape(s, s, m, -1)
        .min(axis=3)
    )
    best = votes.max(axis=2)
    tie_depth = np.where(votes == best[:, :, None], depth_cells, np.inf)
    winner = np.argmin(tie_depth, axis=2)
    fg = best > 0

    labels = np.where(fg, class_ids[winner], 0)
    instance_ids = np.where(fg, winner, -1)
    keypoints = np.where(fg[:, :, None, None], kp_px[winner], 0.0)
    return GroundTruthGrid(
        spec=spec,
        labels=labels,
        instance_ids=instance_ids,
        keypoints_px=keypoints,
        skipped_instances=tuple(skipped),
    )
