"""Turn per-cell keypoint predictions into per-instance correspondence sets.

Foreground cells are clustered per class by single linkage on each cell's
decoded-keypoint centroid; a selection strategy then picks, per 3D keypoint,
which candidate 2D predictions feed PnP:

* no_fusion           — all N predictions of the single most central cell.
* highest_confidence  — the top-confidence candidate per keypoint.
* best_n              — the n most confident candidates per keypoint.
* oracle              — the candidate nearest the true projection (needs GT).

All tie-breaks go to the lowest row-major cell index, so outputs are
deterministic under any input ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, DataError, EmptyClusterError
from .grid import PredictionGrid, cell_centers

STRATEGIES = ("nf", "hc", "bn", "oracle")
DEFAULT_CLUSTER_THRESHOLD_PX = 30.0
DEFAULT_BEST_N = 10
DEFAULT_MIN_CELLS = 2


@dataclass
class Cluster:
    """Cells of one class grouped into one putative object instance.

    Members are sorted by row-major cell index; `candidates_px` holds each
    member's decoded keypoint predictions so column i is keypoint i's
    candidate list.
    """

    class_label: int
    cells: tuple[tuple[int, int], ...]
    centroids: np.ndarray
    candidates_px: np.ndarray
    confidences: np.ndarray

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def mean_centroid(self) -> np.ndarray:
        return self.centroids.mean(axis=0)


@dataclass
class CorrespondenceSet:
    """Weighted 3D-to-2D matches for one object instance."""

    class_label: int
    keypoint_indices: np.ndarray
    points3d: np.ndarray
    points2d: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        self.keypoint_indices = np.asarray(self.keypoint_indices, dtype=int)
        self.points3d = np.asarray(self.points3d, dtype=float).reshape(-1, 3)
        self.points2d = np.asarray(self.points2d, dtype=float).reshape(-1, 2)
        self.confidences = np.asarray(self.confidences, dtype=float).reshape(-1)
        p = len(self.keypoint_indices)
        if not (len(self.points3d) == len(self.points2d) == len(self.confidences) == p):
            raise DataError("correspondence arrays have mismatched lengths")

    def __len__(self) -> int:
        return len(self.keypoint_indices)


def cluster_cells(grid: PredictionGrid, threshold_px: float, min_cells: int = 1) -> list[Cluster]:
    """Single-linkage clusters of foreground cells, per class.

    Each cell is represented by the centroid of its decoded keypoints; cells
    of the same class whose centroids are within `threshold_px` are linked
    (connected components of the thresholded distance graph). Clusters with
    fewer than `min_cells` members are discarded (pass 1 to keep every
    foreground cell). Output is sorted by smallest member cell index.
    """
    if not threshold_px > 0:
        raise ConfigError("threshold_px must be positive")
    rows, cols = grid.foreground_indices()
    if len(rows) == 0:
        return []
    centers = cell_centers(grid.spec)[rows, cols]
    decoded = centers[:, None, :] + grid.offsets[rows, cols] / grid.spec.scale  # (F, N, 2)
    labels = grid.labels[rows, cols]
    centroids = decoded.mean(axis=1)

    clusters: list[Cluster] = []
    for label in np.unique(labels):
        sel = np.nonzero(labels == label)[0]
        pts = centroids[sel]
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        close = d2 <= threshold_px**2
        if close.all():
            component = np.zeros(len(sel), dtype=int)
            n_comp = 1
        else:
            n_comp, component = connected_components(csr_matrix(close), directed=False)
        for comp in range(n_comp):
            members = np.nonzero(component == comp)[0]
            if len(members) < min_cells:
                continue
            idx = sel[members]
            clusters.append(
                Cluster(
                    class_label=int(label),
                    cells=tuple((int(rows[i]), int(cols[i])) for i in idx),
                    centroids=centroids[idx],
                    candidates_px=decoded[idx],
                    confidences=grid.confidences[rows[idx], cols[idx]],
                )
            )
    clusters.sort(key=lambda c: c.cells[0][0] * grid.spec.s + c.cells[0][1])
    return clusters


def _require_members(cluster: Cluster):
    if len(cluster) == 0:
        raise EmptyClusterError("cluster has no member cells")


def _build_set(cluster: Cluster, keypoints3d, kp_idx, cell_idx) -> CorrespondenceSet:
    keypoints3d = np.asarray(keypoints3d, dtype=float)
    kp_idx = np.asarray(kp_idx, dtype=int)
    cell_idx = np.asarray(cell_idx, dtype=int)
    return CorrespondenceSet(
        class_label=cluster.class_label,
        keypoint_indices=kp_idx,
        points3d=keypoints3d[kp_idx],
        points2d=cluster.candidates_px[cell_idx, kp_idx],
        confidences=cluster.confidences[cell_idx, kp_idx],
    )


def select_no_fusion(cluster: Cluster, keypoints3d) -> CorrespondenceSet:
    """All N predictions of the cell nearest the cluster's mean centroid."""
    _require_members(cluster)
    dist = np.linalg.norm(cluster.centroids - cluster.mean_centroid, axis=1)
    center = int(np.argmin(dist))  # ties: first = lowest row-major index
    n = cluster.candidates_px.shape[1]
    return _build_set(cluster, keypoints3d, np.arange(n), np.full(n, center))


def select_highest_confidence(cluster: Cluster, keypoints3d) -> CorrespondenceSet:
    """Per keypoint, the single candidate with the highest confidence."""
    _require_members(cluster)
    n = cluster.candidates_px.shape[1]
    cells = np.argmax(cluster.confidences, axis=0)
    return _build_set(cluster, keypoints3d, np.arange(n), cells)


def select_best_n(cluster: Cluster, keypoints3d, n: int = DEFAULT_BEST_N) -> CorrespondenceSet:
    """Per keypoint, the min(n, members) candidates in descending confidence."""
    _require_members(cluster)
    if n < 1:
        raise ConfigError("n must be >= 1")
    n_kp = cluster.candidates_px.shape[1]
    take = min(n, len(cluster))
    kp_idx = []
    cell_idx = []
    for i in range(n_kp):
        order = np.argsort(-cluster.confidences[:, i], kind="stable")[:take]
        kp_idx.extend([i] * take)
        cell_idx.extend(order.tolist())
    return _build_set(cluster, keypoints3d, kp_idx, cell_idx)


def select_oracle(cluster: Cluster, keypoints3d, gt_keypoints_px) -> CorrespondenceSet:
    """Per keypoint, the candidate nearest the ground-truth projection."""
    _require_members(cluster)
    gt = np.asarray(gt_keypoints_px, dtype=float)
    n = cluster.candidates_px.shape[1]
    dist = np.linalg.norm(cluster.candidates_px - gt[None, :, :], axis=2)
    cells = np.argmin(dist, axis=0)
    return _build_set(cluster, keypoints3d, np.arange(n), cells)


def select(
    strategy: str,
    cluster: Cluster,
    keypoints3d,
    best_n: int = DEFAULT_BEST_N,
    gt_keypoints_px=None,
) -> CorrespondenceSet:
    """Dispatch a strategy by name; `oracle` requires gt_keypoints_px."""
    if strategy == "nf":
        return select_no_fusion(cluster, keypoints3d)
    if strategy == "hc":
        return select_highest_confidence(cluster, keypoints3d)
    if strategy == "bn":
        return select_best_n(cluster, keypoints3d, best_n)
    if strategy == "oracle":
        if gt_keypoints_px is None:
            raise ConfigError("oracle selection needs ground-truth keypoints")
        return select_oracle(cluster, keypoints3d, gt_keypoints_px)
    raise ConfigError(f"unknown fusion strategy {strategy!r}; expected one of {STRATEGIES}")
