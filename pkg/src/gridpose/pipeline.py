"""End-to-end pipeline: simulate → synthesize → fuse → solve → evaluate.

Every stochastic choice flows from the config's master seed through
per-scene, per-stage substreams, so identical configs produce byte-identical
result CSVs. Stage wall-clocks and file paths land in a RunManifest whose
config hash is stable under field reordering.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, GridPoseError
from .evaluation import AccuracyTable, aggregate, make_record, match_detections
from .fusion import (
    DEFAULT_BEST_N,
    DEFAULT_CLUSTER_THRESHOLD_PX,
    DEFAULT_MIN_CELLS,
    STRATEGIES,
    cluster_cells,
    select,
)
from .geometry import CameraIntrinsics, project_points
from .grid import DEFAULT_GRID_SIZE, GridSpec
from .jsonio import (
    SCHEMA_VERSION,
    dump,
    intrinsics_from_dict,
    intrinsics_to_dict,
    save_ground_truth_grid,
    save_prediction_grid,
    save_scene,
    sha256_of,
)
from .losses import LossConfig
from .pnp import RansacParams, solve_correspondence_set
from .simulator import (
    DEFAULT_INTRINSICS,
    NoiseModel,
    SceneConfig,
    default_model_library,
    sample_scene,
    synthesize_predictions,
)

NOISE_PROFILES = {
    "default": NoiseModel(),
    "zero": NoiseModel.zero(),
}


@dataclass(frozen=True)
class FusionConfig:
    strategies: tuple[str, ...] = ("bn",)
    best_n: int = DEFAULT_BEST_N
    threshold_px: float | None = None  # None: 30 px scaled by image width / 608
    min_cells: int = DEFAULT_MIN_CELLS

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
        if not self.strategies:
            raise ConfigError("at least one fusion strategy required")
        if self.best_n < 1:
            raise ConfigError("best_n must be >= 1")

    def resolved_threshold(self, image_w: int) -> float:
        if self.threshold_px is not None:
            return self.threshold_px
        return DEFAULT_CLUSTER_THRESHOLD_PX * image_w / 608.0


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a reproducible run needs, nested per stage."""

    grid: GridSpec = field(default_factory=lambda: GridSpec(DEFAULT_GRID_SIZE, 608, 608))
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    loss: LossConfig = field(default_factory=lambda: LossConfig(class_weights=(1.0,) * 6))
    fusion: FusionConfig = field(default_factory=FusionConfig)
    ransac: RansacParams = field(default_factory=RansacParams)
    n_scenes: int = 10
    seed: int = 0
    models_path: str | None = None  # None: built-in library

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ConfigError("n_scenes must be >= 1")
        if self.grid.image_w != self.intrinsics.width or self.grid.image_h != self.intrinsics.height:
            raise ConfigError("grid image size must match camera intrinsics")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "grid": {
                "s": self.grid.s,
                "image_w": self.grid.image_w,
                "image_h": self.grid.image_h,
                "norm_span": self.grid.norm_span,
            },
            "intrinsics": intrinsics_to_dict(self.intrinsics),
            "scene": {
                "n_objects": list(self.scene.n_objects),
                "depth_range": list(self.scene.depth_range),
                "center_margin_px": self.scene.center_margin_px,
                "min_center_separation_px": self.scene.min_center_separation_px,
                "min_visible_cells": self.scene.min_visible_cells,
                "max_attempts": self.scene.max_attempts,
            },
            "noise": {
                "inlier_sigma_px": self.noise.inlier_sigma_px,
                "outlier_rate": self.noise.outlier_rate,
                "outlier_sigma_px": self.noise.outlier_sigma_px,
                "confidence_jitter": self.noise.confidence_jitter,
                "label_flip_rate": self.noise.label_flip_rate,
                "tau": self.noise.tau,
            },
            "loss": {
                "tau": self.loss.tau,
                "beta": self.loss.beta,
                "gamma_reg": self.loss.gamma_reg,
                "focal_gamma": self.loss.focal_gamma,
                "class_weights": list(self.loss.class_weights),
            },
            "fusion": {
                "strategies": list(self.fusion.strategies),
                "best_n": self.fusion.best_n,
                "threshold_px": self.fusion.threshold_px,
                "min_cells": self.fusion.min_cells,
            },
            "ransac": {
                "max_iterations": self.ransac.max_iterations,
                "inlier_threshold_px": self.ransac.inlier_threshold_px,
                "min_sample_size": self.ransac.min_sample_size,
                "confidence_stop": self.ransac.confidence_stop,
                "seed": self.ransac.seed,
            },
            "n_scenes": self.n_scenes,
            "seed": self.seed,
            "models_path": self.models_path,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        def sub(key, builder, **kwargs):
            raw = obj.get(key)
            if raw is None:
                return builder(**kwargs)
            return builder(**{**kwargs, **raw})

        grid_raw = dict(obj.get("grid") or {})
        fusion_raw = dict(obj.get("fusion") or {})
        if "strategies" in fusion_raw:
            fusion_raw["strategies"] = tuple(fusion_raw["strategies"])
        scene_raw = dict(obj.get("scene") or {})
        for key in ("n_objects", "depth_range"):
            if key in scene_raw:
                scene_raw[key] = tuple(scene_raw[key])
        loss_raw = dict(obj.get("loss") or {})
        if "class_weights" in loss_raw:
            loss_raw["class_weights"] = tuple(loss_raw["class_weights"])
        intr = obj.get("intrinsics")
        return cls(
            grid=GridSpec(**grid_raw) if grid_raw else GridSpec(DEFAULT_GRID_SIZE, 608, 608),
            intrinsics=intrinsics_from_dict(intr) if intr else DEFAULT_INTRINSICS,
            scene=SceneConfig(**scene_raw),
            noise=NoiseModel(**(obj.get("noise") or {})),
            loss=LossConfig(**loss_raw) if loss_raw else LossConfig(class_weights=(1.0,) * 6),
            fusion=FusionConfig(**fusion_raw),
            ransac=RansacParams(**(obj.get("ransac") or {})),
            n_scenes=obj.get("n_scenes", 10),
            seed=obj.get("seed", 0),
            models_path=obj.get("models_path"),
        )

    def config_hash(self) -> str:
        return sha256_of(self.to_dict())


@dataclass
class RunManifest:
    config_hash: str
    versions: dict[str, object]
    stage_seconds: dict[str, float] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "versions": self.versions,
            "stage_seconds": self.stage_seconds,
            "files": self.files,
        }


@dataclass
class PipelineResult:
    table: AccuracyTable
    manifest: RunManifest
    records: list
    false_positives: dict


def _instance_seed(*path) -> int:
    return int(np.random.SeedSequence(list(path)).generate_state(1)[0])


def _load_library(config: PipelineConfig):
    if config.models_path is None:
        return default_model_library()
    from .jsonio import load_models

    return load_models(config.models_path)


def process_scene(scene, models, config: PipelineConfig, scene_id: int, grid=None, gt=None):
    """Fuse, solve, and evaluate one scene for every configured strategy.

    Returns (records, false_positive_counts, fuse_solve_seconds).
    """
    spec = config.grid
    k = config.intrinsics
    if grid is None or gt is None:
        grid, gt = synthesize_predictions(
            scene, models, spec, k, config.noise, seed=[config.seed, scene_id, 1]
        )
    threshold = config.fusion.resolved_threshold(spec.image_w)

    t0 = time.perf_counter()
    clusters = cluster_cells(grid, threshold, min_cells=config.fusion.min_cells)
    matching = match_detections(clusters, scene, models)
    t_cluster = time.perf_counter() - t0
    cluster_share_us = 1e6 * t_cluster / max(1, len(scene.instances))

    cluster_of_instance = {ii: ci for ci, ii in matching.pairs}
    records = []
    false_positives: dict[tuple[str, int], int] = {}
    total_fuse_solve = t_cluster * len(config.fusion.strategies)
    for si, strategy in enumerate(config.fusion.strategies):
        for ii, (model_id, gt_pose) in enumerate(scene.instances):
            model = models[model_id]
            ci = cluster_of_instance.get(ii)
            if ci is None:
                records.append(
                    make_record(scene_id, ii, model, strategy, None, gt_pose, k)
                )
                continue
            gt_kp = project_points(model.keypoints, gt_pose, k)
            t1 = time.perf_counter()
            cs = select(
                strategy,
                clusters[ci],
                model.keypoints,
                best_n=config.fusion.best_n,
                gt_keypoints_px=gt_kp if strategy == "oracle" else None,
            )
            est_pose = None
            flag = ""
            try:
                params = replace(
                    config.ransac, seed=_instance_seed(config.seed, scene_id, 2, si, ii)
                )
                solution = solve_correspondence_set(cs, k, params)
                est_pose = solution.pose
            except GridPoseError as exc:
                flag = type(exc).__name__
            elapsed = time.perf_counter() - t1
            total_fuse_solve += elapsed
            records.append(
                make_record(
                    scene_id,
                    ii,
                    model,
                    strategy,
                    est_pose,
                    gt_pose,
                    k,
                    solve_time_us=elapsed * 1e6 + cluster_share_us,
                    flag=flag,
                )
            )
        for ci in matching.unmatched_clusters:
            key = (strategy, clusters[ci].class_label)
            false_positives[key] = false_positives.get(key, 0) + 1
    return records, false_positives, total_fuse_solve


def run_pipeline(
    config: PipelineConfig,
    out_dir=None,
    write_artifacts: bool = False,
    figures: bool = False,
) -> PipelineResult:
    """Run the full pipeline; optionally persist results under out_dir.

    With `out_dir` set, writes config.json, results.csv, results.json and
    manifest.json (plus per-scene artifacts with `write_artifacts`, and report
    figures with `figures`).
    """
    models = _load_library(config)
    manifest = RunManifest(
        config_hash=config.config_hash(),
        versions={"package": __version__, "schema": SCHEMA_VERSION},
    )
    out = Path(out_dir) if out_dir is not None else None

    t0 = time.perf_counter()
    scenes = [
        sample_scene(
            config.scene, models, config.intrinsics, seed=[config.seed, i, 0], spec=config.grid
        )
        for i in range(config.n_scenes)
    ]
    manifest.stage_seconds["simulate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    synthesized = [
        synthesize_predictions(
            scenes[i], models, config.grid, config.intrinsics, config.noise,
            seed=[config.seed, i, 1],
        )
        for i in range(config.n_scenes)
    ]
    manifest.stage_seconds["synthesize"] = time.perf_counter() - t0

    if out is not None and write_artifacts:
        for i, scene in enumerate(scenes):
            save_scene(scene, out / f"scene_{i:04d}.json")
            grid, gt = synthesized[i]
            save_prediction_grid(grid, out / f"grid_{i:04d}.json")
            save_ground_truth_grid(gt, out / f"gt_{i:04d}.json")
        manifest.files["artifacts"] = str(out)

    t0 = time.perf_counter()
    records = []
    false_positives: dict[tuple[str, int], int] = {}
    for i, scene in enumerate(scenes):
        grid, gt = synthesized[i]
        recs, fps, _ = process_scene(scene, models, config, i, grid=grid, gt=gt)
        records.extend(recs)
        for key, count in fps.items():
            false_positives[key] = false_positives.get(key, 0) + count
    manifest.stage_seconds["fuse_solve_evaluate"] = time.perf_counter() - t0

    class_names = {m.id: m.name for m in models.values()}
    table = aggregate(records, false_positives, class_names)

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        dump(config.to_dict(), out / "config.json")
        (out / "results.csv").write_text(results_csv(table))
        dump(results_dict(table), out / "results.json")
        manifest.files["config"] = str(out / "config.json")
        manifest.files["results_csv"] = str(out / "results.csv")
        manifest.files["results_json"] = str(out / "results.json")
        if figures:
            from .report import render_figures

            for fig_path in render_figures(table, records, out):
                manifest.files[fig_path.stem] = str(fig_path)
        dump(manifest.to_dict(), out / "manifest.json")
        manifest.files["manifest"] = str(out / "manifest.json")
    return PipelineResult(
        table=table, manifest=manifest, records=records, false_positives=false_positives
    )


_CSV_COLUMNS = (
    "strategy",
    "class_id",
    "class_name",
    "n_instances",
    "n_matched",
    "false_positives",
    "rep5_accuracy_pct",
    "add01d_accuracy_pct",
)


def _row_cells(row) -> list:
    return [
        row.strategy,
        row.class_id,
        row.class_name,
        row.n_instances,
        row.n_matched,
        row.false_positives,
        f"{row.rep5_accuracy_pct:.6f}",
        f"{row.add01d_accuracy_pct:.6f}",
    ]


def results_csv(table: AccuracyTable) -> str:
    """Deterministic CSV rendering of an accuracy table (per-class + overall)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for row in table.rows:
        writer.writerow(_row_cells(row))
    for strategy in table.strategies():
        writer.writerow(_row_cells(table.overall(strategy)))
    return buf.getvalue()


def results_dict(table: AccuracyTable) -> dict:
    def encode(row):
        return {
            "strategy": row.strategy,
            "class_id": row.class_id,
            "class_name": row.class_name,
            "n_instances": row.n_instances,
            "n_matched": row.n_matched,
            "false_positives": row.false_positives,
            "rep5_accuracy_pct": row.rep5_accuracy_pct,
            "add01d_accuracy_pct": row.add01d_accuracy_pct,
        }

    return {
        "schema_version": SCHEMA_VERSION,
        "rows": [encode(r) for r in table.rows],
        "overall": [encode(table.overall(s)) for s in table.strategies()],
    }


def table_from_results_dict(obj: dict) -> AccuracyTable:
    from .evaluation import AccuracyRow

    table = AccuracyTable()
    for row in obj.get("rows", []):
        table.rows.append(
            AccuracyRow(
                strategy=row["strategy"],
                class_id=row["class_id"],
                class_name=row["class_name"],
                n_instances=row["n_instances"],
                n_matched=row["n_matched"],
                n_correct_rep5=round(row["rep5_accuracy_pct"] * row["n_instances"] / 100.0),
                n_correct_add01d=round(row["add01d_accuracy_pct"] * row["n_instances"] / 100.0),
                false_positives=row["false_positives"],
            )
        )
    return table
