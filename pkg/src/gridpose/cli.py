"""Command-line interface.

Subcommands: simulate, synth, fuse, solve, evaluate, run, report, gradcheck,
bench. Each is a thin wrapper over a library function with identical
semantics. A JSON config file (--config) supplies defaults; long-form flags
override individual fields. Exit codes: 0 success, 2 config error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, GridPoseError
from .fusion import cluster_cells, select
from .grid import GridSpec
from .jsonio import (
    dump,
    intrinsics_from_dict,
    load_correspondences,
    load_ground_truth_grid,
    load_models,
    load_prediction_grid,
    load_scene,
    save_correspondences,
    save_ground_truth_grid,
    save_prediction_grid,
    save_scene,
    solution_to_dict,
)
from .losses import (
    check_conf_gradient,
    check_focal_gradient,
    check_pos_gradient,
    median_frequency_weights,
    random_check_case,
)
from .pipeline import (
    NOISE_PROFILES,
    PipelineConfig,
    process_scene,
    results_csv,
    results_dict,
    run_pipeline,
    table_from_results_dict,
)
from .pnp import ransac_pnp
from .report import render_figures, render_text_table
from .simulator import default_model_library, sample_scene, synthesize_predictions


def _load_config(args) -> PipelineConfig:
    raw = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        raw = json.loads(path.read_text())
    cfg = PipelineConfig.from_dict(raw)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "scenes", None) is not None:
        cfg = replace(cfg, n_scenes=args.scenes)
    if getattr(args, "noise_profile", None):
        profile = NOISE_PROFILES.get(args.noise_profile)
        if profile is None:
            raise ConfigError(
                f"unknown noise profile {args.noise_profile!r}; "
                f"choose from {sorted(NOISE_PROFILES)}"
            )
        cfg = replace(cfg, noise=profile)
    if getattr(args, "grid_size", None) is not None:
        cfg = replace(
            cfg,
            grid=GridSpec(
                args.grid_size, cfg.grid.image_w, cfg.grid.image_h, cfg.grid.norm_span
            ),
        )
    if getattr(args, "strategies", None):
        cfg = replace(
            cfg, fusion=replace(cfg.fusion, strategies=tuple(args.strategies.split(",")))
        )
    if getattr(args, "best_n", None) is not None:
        cfg = replace(cfg, fusion=replace(cfg.fusion, best_n=args.best_n))
    if getattr(args, "threshold_px", None) is not None:
        cfg = replace(cfg, fusion=replace(cfg.fusion, threshold_px=args.threshold_px))
    if getattr(args, "min_cells", None) is not None:
        cfg = replace(cfg, fusion=replace(cfg.fusion, min_cells=args.min_cells))
    if getattr(args, "max_iterations", None) is not None:
        cfg = replace(cfg, ransac=replace(cfg.ransac, max_iterations=args.max_iterations))
    if getattr(args, "inlier_threshold_px", None) is not None:
        cfg = replace(
            cfg, ransac=replace(cfg.ransac, inlier_threshold_px=args.inlier_threshold_px)
        )
    if getattr(args, "models", None):
        cfg = replace(cfg, models_path=args.models)
    return cfg


def _models_for(cfg: PipelineConfig):
    if cfg.models_path is None:
        return default_model_library()
    return load_models(cfg.models_path)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    models = _models_for(cfg)
    out = Path(args.out_dir)
    for i in range(cfg.n_scenes):
        scene = sample_scene(
            cfg.scene, models, cfg.intrinsics, seed=[cfg.seed, i, 0], spec=cfg.grid
        )
        grid, gt = synthesize_predictions(
            scene, models, cfg.grid, cfg.intrinsics, cfg.noise, seed=[cfg.seed, i, 1]
        )
        save_scene(scene, out / f"scene_{i:04d}.json")
        save_prediction_grid(grid, out / f"grid_{i:04d}.json", instance_ids=gt.instance_ids)
        save_ground_truth_grid(gt, out / f"gt_{i:04d}.json")
    print(f"wrote {cfg.n_scenes} scene/grid/gt triples to {out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    models = _models_for(cfg)
    out = Path(args.out_dir)
    scene_paths = sorted(Path(args.scenes_dir).glob("scene_*.json"))
    if not scene_paths:
        raise ConfigError(f"no scene_*.json files under {args.scenes_dir}")
    for i, path in enumerate(scene_paths):
        scene = load_scene(path)
        grid, gt = synthesize_predictions(
            scene, models, cfg.grid, scene.intrinsics, cfg.noise, seed=[cfg.seed, i, 1]
        )
        stem = path.stem.replace("scene", "grid", 1)
        save_prediction_grid(grid, out / f"{stem}.json", instance_ids=gt.instance_ids)
        save_ground_truth_grid(gt, out / f"{path.stem.replace('scene', 'gt', 1)}.json")
    print(f"synthesized grids for {len(scene_paths)} scenes into {out}")
    return 0


def cmd_fuse(args) -> int:
    cfg = _load_config(args)
    models = _models_for(cfg)
    grid = load_prediction_grid(args.grid)
    threshold = cfg.fusion.resolved_threshold(grid.spec.image_w)
    clusters = cluster_cells(grid, threshold, min_cells=cfg.fusion.min_cells)
    strategy = cfg.fusion.strategies[0]
    gt = load_ground_truth_grid(args.ground_truth) if args.ground_truth else None
    if strategy == "oracle" and gt is None:
        raise ConfigError("--ground-truth is required for the oracle strategy")

    sets = []
    for cluster in clusters:
        model = models.get(cluster.class_label)
        if model is None:
            raise ConfigError(f"no model with class id {cluster.class_label}")
        gt_kp = None
        if strategy == "oracle":
            row, col = cluster.cells[0]
            gt_kp = gt.keypoints_px[row, col]
        sets.append(
            select(strategy, cluster, model.keypoints, best_n=cfg.fusion.best_n, gt_keypoints_px=gt_kp)
        )
    save_correspondences(sets, strategy, args.output, intrinsics=cfg.intrinsics)
    print(f"wrote {len(sets)} correspondence set(s) to {args.output} (strategy {strategy})")
    return 0


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    sets, strategy, intrinsics = load_correspondences(args.correspondences)
    if intrinsics is None:
        intrinsics = cfg.intrinsics
    solutions = []
    for i, cs in enumerate(sets):
        params = replace(cfg.ransac, seed=cfg.ransac.seed + i)
        solution = ransac_pnp(
            cs.points3d,
            cs.points2d,
            intrinsics,
            params,
            confidences=cs.confidences,
            keypoint_ids=cs.keypoint_indices,
        )
        solutions.append({"class": cs.class_label, **solution_to_dict(solution)})
    payload = {"schema_version": 1, "strategy": strategy, "solutions": solutions}
    dump(payload, args.output)
    print(f"solved {len(solutions)} instance(s) -> {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    models = _models_for(cfg)
    from .evaluation import aggregate

    scene_paths = sorted(Path(args.scenes_dir).glob("scene_*.json"))
    if not scene_paths:
        raise ConfigError(f"no scene_*.json files under {args.scenes_dir}")
    records = []
    false_positives: dict = {}
    for i, path in enumerate(scene_paths):
        scene = load_scene(path)
        grid = load_prediction_grid(Path(str(path).replace("scene_", "grid_")))
        gt = load_ground_truth_grid(Path(str(path).replace("scene_", "gt_")))
        recs, fps, _ = process_scene(scene, models, cfg, i, grid=grid, gt=gt)
        records.extend(recs)
        for key, count in fps.items():
            false_positives[key] = false_positives.get(key, 0) + count
    table = aggregate(records, false_positives, {m.id: m.name for m in models.values()})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(table))
    dump(results_dict(table), out / "results.json")
    if args.figures:
        render_figures(table, records, out)
    print(render_text_table(table))
    print(f"results written to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    result = run_pipeline(
        cfg,
        out_dir=args.out_dir,
        write_artifacts=args.keep_artifacts,
        figures=args.figures,
    )
    print(render_text_table(result.table))
    if args.out_dir:
        print(f"results written to {args.out_dir}")
    return 0


def cmd_report(args) -> int:
    obj = json.loads(Path(args.results).read_text())
    table = table_from_results_dict(obj)
    text = render_text_table(table)
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.txt").write_text(text)
        paths = render_figures(table, [], out)
        print(f"wrote {out / 'results.txt'} and {len(paths)} figure(s)")
    return 0


def cmd_gradcheck(args) -> int:
    grid, gt, _ = random_check_case(args.seed)
    counts = np.bincount(gt.labels.ravel(), minlength=4)
    if np.all(counts > 0):
        weights = median_frequency_weights(counts)
    else:
        weights = np.ones(4)
    reports = {
        "pos": check_pos_gradient(grid, gt, weights, step=args.step),
        "conf": check_conf_gradient(grid, gt, tau=1.0, weights=weights, step=args.step),
    }
    rng = np.random.default_rng(args.seed)
    probs = rng.uniform(0.05, 1.0, size=(6, 4))
    probs /= probs.sum(axis=1, keepdims=True)
    labels = rng.integers(0, 4, size=6)
    reports["focal"] = check_focal_gradient(probs, labels, weights, focal_gamma=2.0, step=args.step)

    def encode(report):
        return {
            "loss": report.loss,
            "max_rel_err": report.max_rel_err,
            "worst_coordinate": report.worst_coordinate,
        }

    if args.loss == "all":
        payload = {name: encode(r) for name, r in reports.items()}
        worst = max(reports.values(), key=lambda r: r.max_rel_err)
        payload["max_rel_err"] = worst.max_rel_err
    else:
        payload = encode(reports[args.loss])
    text = json.dumps(payload, indent=1)
    print(text)
    if args.output:
        Path(args.output).write_text(text + "\n")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    cfg = replace(cfg, fusion=replace(cfg.fusion, strategies=("bn",)))
    models = _models_for(cfg)
    times_us = []
    for i in range(cfg.n_scenes):
        scene = sample_scene(
            cfg.scene, models, cfg.intrinsics, seed=[cfg.seed, i, 0], spec=cfg.grid
        )
        recs, _, _ = process_scene(scene, models, cfg, i)
        times_us.extend(r.solve_time_us for r in recs if r.matched)
    if not times_us:
        raise ConfigError("benchmark produced no matched instances")
    times_ms = [t / 1000.0 for t in times_us]
    times_ms.sort()
    payload = {
        "n_objects": len(times_ms),
        "mean_ms": statistics.fmean(times_ms),
        "median_ms": statistics.median(times_ms),
        "p90_ms": times_ms[int(0.9 * (len(times_ms) - 1))],
        "max_ms": times_ms[-1],
        "budget_ms": args.budget_ms,
        "within_budget": statistics.median(times_ms) <= args.budget_ms,
    }
    text = json.dumps(payload, indent=1)
    print(text)
    if args.output:
        Path(args.output).write_text(text + "\n")
    return 0


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON pipeline config; flags override its fields")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--scenes", type=int, help="number of scenes")
    p.add_argument("--noise-profile", dest="noise_profile", help="named noise profile (default, zero)")
    p.add_argument("--grid-size", dest="grid_size", type=int, help="grid cells per side")
    p.add_argument("--strategies", help="comma-separated fusion strategies (nf,hc,bn,oracle)")
    p.add_argument("--best-n", dest="best_n", type=int, help="candidates per keypoint for bn")
    p.add_argument("--threshold-px", dest="threshold_px", type=float, help="cluster linkage threshold")
    p.add_argument("--min-cells", dest="min_cells", type=int, help="minimum cells per cluster")
    p.add_argument("--max-iterations", dest="max_iterations", type=int, help="RANSAC iteration cap")
    p.add_argument(
        "--inlier-threshold-px", dest="inlier_threshold_px", type=float, help="RANSAC inlier gate"
    )
    p.add_argument("--models", help="model library JSON (default: built-in library)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridpose",
        description="Grid-cell keypoint prediction, confidence fusion, and RANSAC-EPnP pose estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample scenes and write scene/grid/gt JSON files")
    _add_config_flags(p)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="synthesize prediction grids for existing scene files")
    _add_config_flags(p)
    p.add_argument("--scenes-dir", dest="scenes_dir", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fuse", help="cluster a grid and emit correspondence sets")
    _add_config_flags(p)
    p.add_argument("--grid", required=True, help="prediction grid JSON")
    p.add_argument("--ground-truth", dest="ground_truth", help="gt grid JSON (oracle strategy)")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("solve", help="RANSAC-EPnP poses from correspondence sets")
    _add_config_flags(p)
    p.add_argument("--correspondences", required=True)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="evaluate saved scene/grid/gt triples")
    _add_config_flags(p)
    p.add_argument("--scenes-dir", dest="scenes_dir", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--figures", action="store_true", help="render PNG figures next to the CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline: simulate, synthesize, fuse, solve, evaluate")
    _add_config_flags(p)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--keep-artifacts", dest="keep_artifacts", action="store_true")
    p.add_argument("--figures", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render a results.json as text table and figures")
    p.add_argument("--results", required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="verify analytic loss gradients by finite differences")
    p.add_argument("--loss", choices=("all", "pos", "conf", "focal"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="time fuse+solve per object against the runtime budget")
    _add_config_flags(p)
    p.add_argument("--budget-ms", dest="budget_ms", type=float, default=10.0)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GridPoseError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
