"""Score predicted poses against ground truth and build accuracy tables.

An instance counts as correct under REP-5px when its mean 2D reprojection
discrepancy is strictly below 5 pixels and under ADD-0.1d when its mean 3D
discrepancy is strictly below 10% of the model diameter; symmetric models use
the nearest-neighbor metric variants. Ground-truth instances that produce no
detection are recorded as misses and count against accuracy; spurious
detections are tallied separately as false positives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError
from .geometry import (
    CameraIntrinsics,
    ObjectModel,
    Pose,
    add_metric,
    adds_metric,
    project_points,
    rep_metric,
)

REP_THRESHOLD_PX = 5.0
ADD_DIAMETER_FRACTION = 0.1


@dataclass
class EvalRecord:
    """Outcome of one (instance, strategy) evaluation.

    The correctness flags are derived from the stored raw values at
    construction, so they can never drift out of sync with them.
    """

    scene_id: int
    instance_id: int
    class_id: int
    strategy: str
    rep_px: float
    add_units: float
    add_threshold_units: float
    solve_time_us: float
    matched: bool = True
    flag: str = ""
    correct_rep5: bool = field(init=False)
    correct_add01d: bool = field(init=False)

    def __post_init__(self):
        self.correct_rep5 = bool(self.rep_px < REP_THRESHOLD_PX)
        self.correct_add01d = bool(self.add_units < self.add_threshold_units)


def make_record(
    scene_id: int,
    instance_id: int,
    model: ObjectModel,
    strategy: str,
    est_pose: Pose | None,
    gt_pose: Pose,
    intrinsics: CameraIntrinsics,
    solve_time_us: float = 0.0,
    flag: str = "",
) -> EvalRecord:
    """Evaluate one pose estimate (or a miss when est_pose is None)."""
    threshold = ADD_DIAMETER_FRACTION * model.diameter
    rep = math.inf
    add = math.inf
    if est_pose is None:
        flag = flag or "miss"
    else:
        try:
            rep = rep_metric(est_pose, gt_pose, model, intrinsics, model.symmetric)
            add = (
                adds_metric(est_pose, gt_pose, model)
                if model.symmetric
                else add_metric(est_pose, gt_pose, model)
            )
        except BehindCameraError:
            rep = math.inf
            add = math.inf
            flag = "behind_camera"
    return EvalRecord(
        scene_id=scene_id,
        instance_id=instance_id,
        class_id=model.id,
        strategy=strategy,
        rep_px=rep,
        add_units=add,
        add_threshold_units=threshold,
        solve_time_us=solve_time_us,
        matched=est_pose is not None,
        flag=flag,
    )


def evaluate_instance(
    solution,
    gt_pose: Pose,
    model: ObjectModel,
    intrinsics: CameraIntrinsics,
    scene_id: int = 0,
    instance_id: int = 0,
    strategy: str = "",
    solve_time_us: float = 0.0,
) -> EvalRecord:
    """EvalRecord for a PnP solution (uses symmetric metrics when flagged)."""
    return make_record(
        scene_id, instance_id, model, strategy, solution.pose, gt_pose, intrinsics, solve_time_us
    )


@dataclass
class Matching:
    """Greedy one-to-one detection assignment for one scene."""

    pairs: list[tuple[int, int]]
    unmatched_clusters: list[int]
    unmatched_instances: list[int]


def match_detections(clusters, scene, models) -> Matching:
    """Match clusters to scene instances: same class, nearest projected center.

    Candidate (cluster, instance) pairs of equal class are consumed greedily
    in order of centroid distance (ties by lower cluster then instance index),
    each side used at most once. Leftovers are false positives and misses.
    """
    gt_centers = []
    for model_id, pose in scene.instances:
        kp = project_points(models[model_id].keypoints, pose, scene.intrinsics)
        gt_centers.append(kp.mean(axis=0))
    candidates = []
    for ci, cluster in enumerate(clusters):
        for ii, (model_id, _) in enumerate(scene.instances):
            if models[model_id].id != cluster.class_label:
                continue
            dist = float(np.linalg.norm(cluster.mean_centroid - gt_centers[ii]))
            candidates.append((dist, ci, ii))
    candidates.sort()
    used_c: set[int] = set()
    used_i: set[int] = set()
    pairs = []
    for _, ci, ii in candidates:
        if ci in used_c or ii in used_i:
            continue
        pairs.append((ci, ii))
        used_c.add(ci)
        used_i.add(ii)
    return Matching(
        pairs=pairs,
        unmatched_clusters=[ci for ci in range(len(clusters)) if ci not in used_c],
        unmatched_instances=[ii for ii in range(len(scene.instances)) if ii not in used_i],
    )


@dataclass
class AccuracyRow:
    strategy: str
    class_id: int
    class_name: str
    n_instances: int
    n_matched: int
    n_correct_rep5: int
    n_correct_add01d: int
    false_positives: int

    @property
    def rep5_accuracy_pct(self) -> float:
        return 100.0 * self.n_correct_rep5 / self.n_instances if self.n_instances else 0.0

    @property
    def add01d_accuracy_pct(self) -> float:
        return 100.0 * self.n_correct_add01d / self.n_instances if self.n_instances else 0.0


@dataclass
class AccuracyTable:
    rows: list[AccuracyRow] = field(default_factory=list)

    def overall(self, strategy: str) -> AccuracyRow:
        rows = [r for r in self.rows if r.strategy == strategy]
        return AccuracyRow(
            strategy=strategy,
            class_id=0,
            class_name="all",
            n_instances=sum(r.n_instances for r in rows),
            n_matched=sum(r.n_matched for r in rows),
            n_correct_rep5=sum(r.n_correct_rep5 for r in rows),
            n_correct_add01d=sum(r.n_correct_add01d for r in rows),
            false_positives=sum(r.false_positives for r in rows),
        )

    def strategies(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r.strategy not in seen:
                seen.append(r.strategy)
        return seen


def aggregate(records, false_positives=None, class_names=None) -> AccuracyTable:
    """Fold evaluation records into per-(class, strategy) accuracy rows.

    `false_positives` maps (strategy, class_id) to spurious-detection counts;
    they are reported alongside but never enter the accuracy denominators
    (those count ground-truth instances, misses included).
    """
    false_positives = false_positives or {}
    class_names = class_names or {}
    keys = sorted({(r.strategy, r.class_id) for r in records})
    table = AccuracyTable()
    for strategy, class_id in keys:
        sel = [r for r in records if r.strategy == strategy and r.class_id == class_id]
        table.rows.append(
            AccuracyRow(
                strategy=strategy,
                class_id=class_id,
                class_name=class_names.get(class_id, str(class_id)),
                n_instances=len(sel),
                n_matched=sum(1 for r in sel if r.matched),
                n_correct_rep5=sum(1 for r in sel if r.correct_rep5),
                n_correct_add01d=sum(1 for r in sel if r.correct_add01d),
                false_positives=int(false_positives.get((strategy, class_id), 0)),
            )
        )
    return table
