"""Versioned JSON persistence for models, scenes, grids, correspondences, results.

Floats go through Python's shortest round-trip repr, so save → load is
bit-exact for doubles. Every file carries a `schema_version`; loaders raise
SchemaViolationError naming the offending field path on any mismatch.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import SchemaViolationError
from .fusion import CorrespondenceSet
from .geometry import CameraIntrinsics, ObjectModel, Pose
from .grid import GridSpec, GroundTruthGrid, PredictionGrid
from .pnp import PnpSolution
from .simulator import Scene

SCHEMA_VERSION = 1


def canonical_json(payload) -> str:
    """Key-sorted, compact serialization; stable under dict field reordering."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def sha256_of(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def dump(payload: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1) + "\n")
    return path


def _get(obj: dict, key: str, kind, path: str):
    if not isinstance(obj, dict):
        raise SchemaViolationError(f"{path}: expected an object")
    if key not in obj:
        raise SchemaViolationError(f"{path}.{key}: missing required field")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaViolationError(f"{path}.{key}: expected a number")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaViolationError(f"{path}.{key}: expected an integer")
        return value
    if not isinstance(value, kind):
        raise SchemaViolationError(f"{path}.{key}: expected {kind.__name__}")
    return value


def _check_version(obj: dict, path: str):
    version = _get(obj, "schema_version", int, path)
    if version != SCHEMA_VERSION:
        raise SchemaViolationError(
            f"{path}.schema_version: got {version}, supported {SCHEMA_VERSION}"
        )


def _array(value, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaViolationError(f"{path}: not a numeric array ({exc})") from exc
    return arr


# -- models -----------------------------------------------------------------

def model_to_dict(model: ObjectModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "id": model.id,
        "name": model.name,
        "keypoints": model.keypoints.tolist(),
        "surface_points": model.surface_points.tolist(),
        "diameter": model.diameter,
        "symmetric": model.symmetric,
    }


def model_from_dict(obj: dict, path: str = "model") -> ObjectModel:
    _check_version(obj, path)
    return ObjectModel(
        id=_get(obj, "id", int, path),
        name=_get(obj, "name", str, path),
        keypoints=_array(_get(obj, "keypoints", list, path), f"{path}.keypoints"),
        surface_points=_array(_get(obj, "surface_points", list, path), f"{path}.surface_points"),
        diameter=_get(obj, "diameter", float, path),
        symmetric=_get(obj, "symmetric", bool, path),
    )


def save_models(models: dict[int, ObjectModel], path) -> Path:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "models": [model_to_dict(models[k]) for k in sorted(models)],
    }
    return dump(payload, path)


def load_models(path) -> dict[int, ObjectModel]:
    obj = json.loads(Path(path).read_text())
    _check_version(obj, "models_file")
    models = {}
    for i, entry in enumerate(_get(obj, "models", list, "models_file")):
        model = model_from_dict(entry, f"models[{i}]")
        models[model.id] = model
    return models


# -- camera / poses / scenes --------------------------------------------------

def intrinsics_to_dict(k: CameraIntrinsics) -> dict:
    return {
        "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
        "width": k.width, "height": k.height,
    }


def intrinsics_from_dict(obj: dict, path: str = "intrinsics") -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=_get(obj, "fx", float, path),
        fy=_get(obj, "fy", float, path),
        cx=_get(obj, "cx", float, path),
        cy=_get(obj, "cy", float, path),
        width=_get(obj, "width", int, path),
        height=_get(obj, "height", int, path),
    )


def pose_to_dict(pose: Pose) -> dict:
    return {"rotation": pose.rotation.tolist(), "translation": pose.translation.tolist()}


def pose_from_dict(obj: dict, path: str = "pose") -> Pose:
    return Pose(
        rotation=_array(_get(obj, "rotation", list, path), f"{path}.rotation"),
        translation=_array(_get(obj, "translation", list, path), f"{path}.translation"),
    )


def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "intrinsics": intrinsics_to_dict(scene.intrinsics),
        "instances": [
            {"model_id": model_id, **pose_to_dict(pose)}
            for model_id, pose in scene.instances
        ],
    }


def scene_from_dict(obj: dict, path: str = "scene") -> Scene:
    _check_version(obj, path)
    intrinsics = intrinsics_from_dict(_get(obj, "intrinsics", dict, path), f"{path}.intrinsics")
    instances = []
    for i, entry in enumerate(_get(obj, "instances", list, path)):
        ipath = f"{path}.instances[{i}]"
        instances.append((_get(entry, "model_id", int, ipath), pose_from_dict(entry, ipath)))
    return Scene(intrinsics=intrinsics, instances=tuple(instances))


def save_scene(scene: Scene, path) -> Path:
    return dump(scene_to_dict(scene), path)


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))


# -- grids --------------------------------------------------------------------

def spec_to_dict(spec: GridSpec) -> dict:
    return {
        "s": spec.s, "image_w": spec.image_w, "image_h": spec.image_h,
        "norm_span": spec.norm_span,
    }


def spec_from_dict(obj: dict, path: str = "spec") -> GridSpec:
    return GridSpec(
        s=_get(obj, "s", int, path),
        image_w=_get(obj, "image_w", int, path),
        image_h=_get(obj, "image_h", int, path),
        norm_span=_get(obj, "norm_span", float, path),
    )


def prediction_grid_to_dict(grid: PredictionGrid, instance_ids=None) -> dict:
    """Foreground cells only; `instance` is null unless ids are supplied."""
    rows, cols = grid.foreground_indices()
    cells = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        cells.append(
            {
                "row": r,
                "col": c,
                "label": int(grid.labels[r, c]),
                "instance": None if instance_ids is None else int(instance_ids[r, c]),
                "keypoints": [
                    {
                        "dx": float(grid.offsets[r, c, i, 0]),
                        "dy": float(grid.offsets[r, c, i, 1]),
                        "conf": float(grid.confidences[r, c, i]),
                    }
                    for i in range(grid.n_keypoints)
                ],
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "prediction",
        "n_keypoints": grid.n_keypoints,
        "spec": spec_to_dict(grid.spec),
        "cells": cells,
    }


def prediction_grid_from_dict(obj: dict, path: str = "grid") -> PredictionGrid:
    _check_version(obj, path)
    spec = spec_from_dict(_get(obj, "spec", dict, path), f"{path}.spec")
    n_kp = _get(obj, "n_keypoints", int, path)
    labels = np.zeros((spec.s, spec.s), dtype=int)
    offsets = np.zeros((spec.s, spec.s, n_kp, 2))
    confidences = np.zeros((spec.s, spec.s, n_kp))
    for i, cell in enumerate(_get(obj, "cells", list, path)):
        cpath = f"{path}.cells[{i}]"
        r = _get(cell, "row", int, cpath)
        c = _get(cell, "col", int, cpath)
        if not (0 <= r < spec.s and 0 <= c < spec.s):
            raise SchemaViolationError(f"{cpath}: cell index ({r}, {c}) out of range")
        labels[r, c] = _get(cell, "label", int, cpath)
        kps = _get(cell, "keypoints", list, cpath)
        if len(kps) != n_kp:
            raise SchemaViolationError(f"{cpath}.keypoints: expected {n_kp} entries")
        for k, kp in enumerate(kps):
            kpath = f"{cpath}.keypoints[{k}]"
            offsets[r, c, k] = (_get(kp, "dx", float, kpath), _get(kp, "dy", float, kpath))
            confidences[r, c, k] = _get(kp, "conf", float, kpath)
    return PredictionGrid(spec=spec, labels=labels, offsets=offsets, confidences=confidences)


def ground_truth_grid_to_dict(gt: GroundTruthGrid) -> dict:
    rows, cols = gt.foreground_indices()
    cells = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        cells.append(
            {
                "row": r,
                "col": c,
                "label": int(gt.labels[r, c]),
                "instance": int(gt.instance_ids[r, c]),
                "keypoints_px": gt.keypoints_px[r, c].tolist(),
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "ground_truth",
        "n_keypoints": gt.n_keypoints,
        "spec": spec_to_dict(gt.spec),
        "skipped_instances": list(gt.skipped_instances),
        "cells": cells,
    }


def ground_truth_grid_from_dict(obj: dict, path: str = "gt_grid") -> GroundTruthGrid:
    _check_version(obj, path)
    spec = spec_from_dict(_get(obj, "spec", dict, path), f"{path}.spec")
    n_kp = _get(obj, "n_keypoints", int, path)
    labels = np.zeros((spec.s, spec.s), dtype=int)
    instances = np.full((spec.s, spec.s), -1, dtype=int)
    keypoints = np.zeros((spec.s, spec.s, n_kp, 2))
    for i, cell in enumerate(_get(obj, "cells", list, path)):
        cpath = f"{path}.cells[{i}]"
        r = _get(cell, "row", int, cpath)
        c = _get(cell, "col", int, cpath)
        labels[r, c] = _get(cell, "label", int, cpath)
        instances[r, c] = _get(cell, "instance", int, cpath)
        kp = _array(_get(cell, "keypoints_px", list, cpath), f"{cpath}.keypoints_px")
        if kp.shape != (n_kp, 2):
            raise SchemaViolationError(f"{cpath}.keypoints_px: expected shape ({n_kp}, 2)")
        keypoints[r, c] = kp
    return GroundTruthGrid(
        spec=spec,
        labels=labels,
        instance_ids=instances,
        keypoints_px=keypoints,
        skipped_instances=tuple(_get(obj, "skipped_instances", list, path)),
    )


def save_prediction_grid(grid: PredictionGrid, path, instance_ids=None) -> Path:
    return dump(prediction_grid_to_dict(grid, instance_ids), path)


def load_prediction_grid(path) -> PredictionGrid:
    return prediction_grid_from_dict(json.loads(Path(path).read_text()))


def save_ground_truth_grid(gt: GroundTruthGrid, path) -> Path:
    return dump(ground_truth_grid_to_dict(gt), path)


def load_ground_truth_grid(path) -> GroundTruthGrid:
    return ground_truth_grid_from_dict(json.loads(Path(path).read_text()))


# -- correspondences and solutions ---------------------------------------------

def correspondences_to_dict(sets: list[CorrespondenceSet], strategy: str, intrinsics=None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "strategy": strategy,
        "intrinsics": None if intrinsics is None else intrinsics_to_dict(intrinsics),
        "sets": [
            {
                "class": cs.class_label,
                "pairs": [
                    {
                        "keypoint_index": int(cs.keypoint_indices[i]),
                        "point3d": cs.points3d[i].tolist(),
                        "point2d": cs.points2d[i].tolist(),
                        "confidence": float(cs.confidences[i]),
                    }
                    for i in range(len(cs))
                ],
            }
            for cs in sets
        ],
    }


def correspondences_from_dict(obj: dict, path: str = "correspondences"):
    _check_version(obj, path)
    strategy = _get(obj, "strategy", str, path)
    intrinsics = None
    if obj.get("intrinsics") is not None:
        intrinsics = intrinsics_from_dict(obj["intrinsics"], f"{path}.intrinsics")
    sets = []
    for i, entry in enumerate(_get(obj, "sets", list, path)):
        spath = f"{path}.sets[{i}]"
        pairs = _get(entry, "pairs", list, spath)
        kp_idx, p3, p2, conf = [], [], [], []
        for j, pair in enumerate(pairs):
            ppath = f"{spath}.pairs[{j}]"
            kp_idx.append(_get(pair, "keypoint_index", int, ppath))
            p3.append(_array(_get(pair, "point3d", list, ppath), f"{ppath}.point3d"))
            p2.append(_array(_get(pair, "point2d", list, ppath), f"{ppath}.point2d"))
            conf.append(_get(pair, "confidence", float, ppath))
        sets.append(
            CorrespondenceSet(
                class_label=_get(entry, "class", int, spath),
                keypoint_indices=np.array(kp_idx, dtype=int),
                points3d=np.array(p3).reshape(-1, 3),
                points2d=np.array(p2).reshape(-1, 2),
                confidences=np.array(conf),
            )
        )
    return sets, strategy, intrinsics


def save_correspondences(sets, strategy: str, path, intrinsics=None) -> Path:
    return dump(correspondences_to_dict(sets, strategy, intrinsics), path)


def load_correspondences(path):
    return correspondences_from_dict(json.loads(Path(path).read_text()))


def solution_to_dict(solution: PnpSolution) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "pose": pose_to_dict(solution.pose),
        "inliers": solution.inlier_mask.astype(bool).tolist(),
        "mean_reproj_px": float(solution.mean_reproj_px),
    }


def solution_from_dict(obj: dict, path: str = "solution") -> PnpSolution:
    _check_version(obj, path)
    return PnpSolution(
        pose=pose_from_dict(_get(obj, "pose", dict, path), f"{path}.pose"),
        inlier_mask=np.array(_get(obj, "inliers", list, path), dtype=bool),
        mean_reproj_px=_get(obj, "mean_reproj_px", float, path),
    )
