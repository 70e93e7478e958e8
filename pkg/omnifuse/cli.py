"""
Command-line entry point: ``omnifuse simulate|calibrate|run|evaluate|heatmap``.

Every flow is file driven so a whole experiment can be replayed without
hardware::

    omnifuse simulate --seed 3 --out scene.jsonl --grid-out grid.csv \\
        --image-samples-out samples.csv
    omnifuse calibrate grid.csv --image-samples samples.csv --out calib/
    omnifuse run scene.jsonl --config omnifuse.toml --out run/
    omnifuse evaluate run/poses.jsonl --scene scene.jsonl --out metrics.json
    omnifuse heatmap scene.jsonl --config omnifuse.toml --out heatmaps/

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List

import numpy as np

from omnifuse.calibration import (
    AffineCalibration,
    LMOptions,
    RadarImageMap,
    apply_affine_many,
    average_grid_readings,
    calibration_mae,
    fit_affine_closed_form,
    fit_affine_lm,
    fit_radar_to_image,
    group_grid_readings,
)
from omnifuse.config import load_config
from omnifuse.environment import generate_environment_fingerprint
from omnifuse.errors import ConvergenceError, DegenerateFitError, OmnifuseError
from omnifuse.lifting import create_lifter
from omnifuse.metrics import CM_PER_M, build_heatmap
from omnifuse.pipeline import (
    RunReport,
    build_pipeline_config,
    evaluate_placements,
    heatmap_samples,
    placement_records,
    replay_scene,
    run_live_simulation,
    save_radar_calibration,
)
from omnifuse.records import (
    compute_sha256,
    read_grid_csv,
    read_image_samples_csv,
    read_pose_records,
    read_scene,
    write_grid_csv,
    write_heatmap_csv,
    write_image_samples_csv,
    write_json,
    write_pose_records,
    write_scene,
)
from omnifuse.simulator import (
    build_scene_frames,
    gen_scene,
    grid_rows,
    simulate_grid_recordings,
    simulate_image_samples,
    truth_from_scene_frames,
)

logger = logging.getLogger(__name__)

POSES_FILENAME = "poses.jsonl"
RUN_REPORT_FILENAME = "run_report.json"
CALIBRATION_BUNDLE_FILENAME = "calibration_bundle.json"


def _load(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def cmd_simulate(args) -> bool:
    config = _load(args)
    truth = gen_scene(config.scene)
    radars = config.radar_configs
    frames = build_scene_frames(truth, config.camera, radars, config.pipeline.detector_noise_px)
    write_scene(args.out, frames)
    logger.info("Scene with %d frames written to %s", len(frames), args.out)

    if args.grid_out:
        rows = []
        for radar in radars:
            recordings = simulate_grid_recordings(
                radar, readings_per_point=args.readings_per_point, seed=config.seed
            )
            rows.extend(grid_rows(recordings))
        write_grid_csv(args.grid_out, rows)
        logger.info("Calibration grid (%d readings) written to %s", len(rows), args.grid_out)

    if args.image_samples_out:
        samples = []
        for radar in radars:
            samples.extend(
                simulate_image_samples(
                    truth, config.camera, radar,
                    detector_noise_px=config.pipeline.detector_noise_px,
                )
            )
        write_image_samples_csv(args.image_samples_out, samples)
        logger.info("%d image samples written to %s", len(samples), args.image_samples_out)
    return True


def _calibrate_radar(radar_id, recordings, image_samples, camera, model) -> Dict:
    samples = [average_grid_readings(rec) for rec in recordings]
    ok = True
    try:
        calibration = fit_affine_lm(samples, LMOptions(model=model), radar_id=radar_id)
    except ConvergenceError as exc:
        logger.error("%s; keeping the best iterate", exc)
        calibration, ok = exc.best, False

    oracle = fit_affine_closed_form(samples, radar_id=radar_id, model=model)
    gap = float(np.max(np.abs(calibration.parameters - oracle.parameters)))
    pre = calibration_mae(AffineCalibration.identity(radar_id), samples)
    post = calibration_mae(calibration, samples)

    image_map = None
    if image_samples:
        raw = np.array([(s.x, s.z) for s in image_samples], dtype=float)
        corrected = apply_affine_many(calibration, raw)
        try:
            image_map = fit_radar_to_image(
                [(xz, s.mean_x) for xz, s in zip(corrected, image_samples)], camera
            )
        except DegenerateFitError as exc:
            logger.warning("radar %d: %s; keeping the analytic image map", radar_id, exc)
    return {
        "ok": ok,
        "calibration": calibration,
        "image_map": image_map,
        "lm_closed_form_gap": gap,
        "mae_before_cm": [v * CM_PER_M for v in pre],
        "mae_after_cm": [v * CM_PER_M for v in post],
    }


def cmd_calibrate(args) -> bool:
    config = _load(args)
    grouped = group_grid_readings(
        (r.radar_id, r.true_x, r.true_z, r.raw_x, r.raw_z) for r in read_grid_csv(args.grid_csv)
    )
    image_samples: Dict[int, List] = {}
    if args.image_samples:
        for sample in read_image_samples_csv(args.image_samples):
            image_samples.setdefault(sample.radar_id, []).append(sample)

    out_dir = Path(args.out)
    entries, all_ok = [], True
    print(f"{'radar':>5}  {'MAE x before':>13}  {'MAE z before':>13}  "
          f"{'MAE x after':>12}  {'MAE z after':>12}  {'LM gap':>9}")
    for radar_id, recordings in sorted(grouped.items()):
        result = _calibrate_radar(
            radar_id, recordings, image_samples.get(radar_id), config.camera, args.model
        )
        all_ok &= result["ok"]
        path = save_radar_calibration(
            out_dir / f"radar_{radar_id}.json", result["calibration"], result["image_map"]
        )
        before, after = result["mae_before_cm"], result["mae_after_cm"]
        print(f"{radar_id:>5}  {before[0]:>10.2f} cm  {before[1]:>10.2f} cm  "
              f"{after[0]:>9.2f} cm  {after[1]:>9.2f} cm  {result['lm_closed_form_gap']:>9.2e}")
        entries.append(
            {
                "radar_id": radar_id,
                "file": path.name,
                "sha256": compute_sha256(path),
                "converged": result["ok"],
                "mae_before_cm": before,
                "mae_after_cm": after,
                "lm_closed_form_gap": result["lm_closed_form_gap"],
                "image_map": result["image_map"] is not None,
            }
        )

    bundle = write_json(
        out_dir / CALIBRATION_BUNDLE_FILENAME,
        {"radars": entries, **generate_environment_fingerprint()},
    )
    logger.info("Calibrated %d radars; bundle written to %s", len(entries), bundle)
    return all_ok


def cmd_run(args) -> bool:
    config = _load(args)
    pipeline_config = build_pipeline_config(config)
    frames = read_scene(args.scene)

    if config.pipeline.lifter == "oracle":
        lifter = create_lifter(
            "oracle", truth=truth_from_scene_frames(frames, config.seed), config=config.lifter
        )
    else:
        lifter = create_lifter("external", path=config.pipeline.lift_file)

    sync = config.sync
    if args.live_sim:
        results = run_live_simulation(
            pipeline_config,
            frames,
            lifter,
            queue_capacity=sync.queue_capacity,
            timeout_s=sync.timeout_s,
            backpressure=sync.backpressure,
            max_latency_s=args.max_latency_ms / 1000.0,
            seed=config.seed,
        )
    else:
        results = replay_scene(
            pipeline_config,
            frames,
            lifter,
            queue_capacity=sync.queue_capacity,
            timeout_s=sync.timeout_s,
        )

    out_dir = Path(args.out)
    records = placement_records(results, frames)
    poses_path = write_pose_records(out_dir / POSES_FILENAME, records)

    report = RunReport.from_results(results, evaluate_placements(records, frames))
    report.poses_file = poses_path.name
    report.poses_sha256 = compute_sha256(poses_path)
    report.environment = generate_environment_fingerprint()
    report_path = write_json(out_dir / RUN_REPORT_FILENAME, report.to_dict())

    print(report.summary())
    print(f"\nRun report written to: {report_path}")
    return True


def cmd_evaluate(args) -> bool:
    records = read_pose_records(args.poses)
    frames = read_scene(args.scene)
    report = evaluate_placements(records, frames)
    path = write_json(args.out, {**report.to_dict(), **generate_environment_fingerprint()})
    print(report.summary())
    print(f"\nMetrics written to: {path}")
    return True


def cmd_heatmap(args) -> bool:
    config = _load(args)
    pipeline_config = build_pipeline_config(config)
    frames = read_scene(args.scene)
    radius = config.scene.arena_radius
    bounds = (-radius, radius, -radius, radius)

    out_dir = Path(args.out)
    for setup in pipeline_config.radars:
        grid = build_heatmap(heatmap_samples(frames, setup.calibration), args.cell_size, bounds)
        path = write_heatmap_csv(out_dir / f"heatmap_radar_{setup.radar_id}.csv", grid.rows())
        logger.info(
            "Radar %d: %d of %d cells populated, written to %s",
            setup.radar_id, int(np.count_nonzero(grid.counts())), grid.counts().size, path,
        )
    return True


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Path to a TOML config file")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        prog="omnifuse",
        description="Omnidirectional camera and mmWave radar 3D pose fusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Simulate a scene")
    p.add_argument("--out", default="scene.jsonl", help="Scene JSONL output")
    p.add_argument("--grid-out", default=None, help="Also write a calibration grid CSV")
    p.add_argument("--image-samples-out", default=None, help="Also write radar/image samples")
    p.add_argument("--readings-per-point", type=int, default=50)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common], help="Fit radar calibrations")
    p.add_argument("grid_csv", help="Calibration grid CSV")
    p.add_argument("--image-samples", default=None, help="Radar/image sample CSV")
    p.add_argument("--model", choices=("full", "per_axis"), default="full")
    p.add_argument("--out", default="calibration", help="Output directory")
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("run", parents=[common], help="Fuse a scene into world poses")
    p.add_argument("scene", help="Scene JSONL")
    p.add_argument("--out", default="run", help="Output directory")
    p.add_argument("--live-sim", action="store_true", help="Threaded radar/camera simulation")
    p.add_argument("--max-latency-ms", type=float, default=10.0,
                   help="Upper bound of simulated radar response latency")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("evaluate", parents=[common], help="Score placed poses against truth")
    p.add_argument("poses", help="Poses JSONL")
    p.add_argument("--scene", required=True, help="Scene JSONL holding the truth")
    p.add_argument("--out", default="metrics.json", help="Metrics JSON output")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("heatmap", parents=[common], help="Localization error heatmaps")
    p.add_argument("scene", help="Scene JSONL")
    p.add_argument("--cell-size", type=float, default=0.5, help="Cell size in meters")
    p.add_argument("--out", default="heatmaps", help="Output directory")
    p.set_defaults(handler=cmd_heatmap)
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s - %(message)s",
    )

    try:
        ok = args.handler(args)
    except (OmnifuseError, OSError) as exc:
        logger.error("%s", exc)
        sys.exit(1)

    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
