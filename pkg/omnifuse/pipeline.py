"""
Per-frame fusion and the replay / live-simulation drivers.

``run_frame`` takes one synchronized frame (radar snapshots) and the camera's
2D poses of the same tick, and produces world-frame 3D poses:

    apply_affine -> radar_to_image_x -> match_people -> perspective_pose
        -> normalize_pose -> lifter -> reconstruct_3d -> place_global

Detections of all radars are pooled before matching, so a person seen by two
overlapping radars is placed once. The numeric stages run batched over all
people of the frame; only the lifter is called per person. Fusion-core latency
excludes the lifter.
"""

import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from omnifuse.calibration import (
    AffineCalibration,
    RadarDetection,
    RadarImageMap,
    apply_affine_many,
    radar_to_image_many,
)
from omnifuse.config import OmnifuseConfig
from omnifuse.errors import ConfigError, LifecycleError, OmnifuseError, ParseError, SyncError
from omnifuse.geometry import (
    DEFAULT_C,
    TWO_PI,
    CameraModel,
    GlobalPose3D,
    NormalizedPose2D,
    NormRecord,
    PerspectiveView,
    Pose2D,
    lift_arrays,
    normalize_arrays,
    perspective_arrays,
    place_arrays,
    view_axes,
)
from omnifuse.lifting import BaseLifter, LiftContext
from omnifuse.matching import (
    CameraCandidate,
    MatchingErrorSummary,
    RadarCandidate,
    default_threshold_px,
    match_people,
    matching_error_pct,
)
from omnifuse.metrics import Axis, PoseErrorReport, localization_mae
from omnifuse.records import PlacedPoseRecord, SceneFrame, read_json, write_json
from omnifuse.skeleton import N_JOINTS, ROOT, OcclusionScenario, canonical_world_scale
from omnifuse.sync import Backpressure, FusedFrame, SensorHub, VirtualClock

logger = logging.getLogger(__name__)

SCALE_MODES = ("radar", "fixed")
_ORIGIN_EPS = 1e-9


@dataclass(frozen=True)
class RadarSetup:
    radar_id: int
    calibration: AffineCalibration
    image_map: RadarImageMap
    calibrated: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    camera: CameraModel
    radars: Tuple[RadarSetup, ...]
    matching_threshold_px: Optional[float] = None
    c: float = DEFAULT_C
    world_scale: Optional[float] = None
    scale_mode: str = "radar"

    def __post_init__(self):
        if not self.radars:
            raise ConfigError("pipeline needs at least one radar")
        ids = [r.radar_id for r in self.radars]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate radar ids: {ids}")
        for setup in self.radars:
            if setup.calibration.radar_id != setup.radar_id:
                raise ConfigError(
                    f"calibration for radar {setup.calibration.radar_id} "
                    f"assigned to radar {setup.radar_id}"
                )
        if not self.c > 1.0:
            raise ConfigError("lifting constant c must exceed 1")
        if self.scale_mode not in SCALE_MODES:
            raise ConfigError(f"scale_mode must be one of {SCALE_MODES}")
        if self.matching_threshold_px is None:
            object.__setattr__(
                self, "matching_threshold_px", default_threshold_px(self.camera.width_px)
            )
        if self.world_scale is None:
            object.__setattr__(self, "world_scale", canonical_world_scale(self.c))

    @classmethod
    def uncalibrated(cls, camera: CameraModel, radar_ids: Iterable[int], **kwargs):
        """Identity affine corrections and the analytic image map for every radar."""
        return cls(
            camera=camera,
            radars=tuple(
                RadarSetup(
                    radar_id=rid,
                    calibration=AffineCalibration.identity(rid),
                    image_map=RadarImageMap.from_camera(camera),
                    calibrated=False,
                )
                for rid in radar_ids
            ),
            **kwargs,
        )

    @property
    def radar_ids(self) -> Tuple[int, ...]:
        return tuple(r.radar_id for r in self.radars)

    def setup(self, radar_id: int) -> Optional[RadarSetup]:
        for r in self.radars:
            if r.radar_id == radar_id:
                return r
        return None


@dataclass(frozen=True)
class PersonError:
    pose_index: int
    person_hint: Any
    stage: str
    message: str


@dataclass(frozen=True)
class Placement:
    pose_index: int
    person_hint: Any
    radar_id: int
    detection_index: int
    mean_x: float
    projected_x: float
    world_scale: float
    pose: GlobalPose3D


@dataclass
class FrameDiagnostics:
    tick: int
    frame_id: int
    matched: int = 0
    unmatched_poses: Tuple[int, ...] = ()
    unmatched_detections: Tuple[Tuple[int, int], ...] = ()
    errors: List[PersonError] = field(default_factory=list)
    uncalibrated_radars: Tuple[int, ...] = ()
    missing_radars: Tuple[int, ...] = ()
    fusion_core_us: float = 0.0


@dataclass(frozen=True)
class FrameResult:
    placements: Tuple[Placement, ...]
    diagnostics: FrameDiagnostics

    @property
    def poses(self) -> List[GlobalPose3D]:
        return [p.pose for p in self.placements]


def _mean_x_batch(u: np.ndarray, visible: np.ndarray, width_px: int) -> np.ndarray:
    """mean_image_x over stacked poses (circular for poses straddling the seam)."""
    count = np.count_nonzero(visible, axis=1)
    arithmetic = np.where(visible, u, 0.0).sum(axis=1) / count
    spread = np.where(visible, u, -np.inf).max(axis=1) - np.where(visible, u, np.inf).min(axis=1)

    angles = u * (TWO_PI / width_px)
    s = np.where(visible, np.sin(angles), 0.0).sum(axis=1) / count
    c = np.where(visible, np.cos(angles), 0.0).sum(axis=1) / count
    circular = np.mod(np.arctan2(s, c) * (width_px / TWO_PI), width_px)
    return np.where(spread > width_px / 2.0, circular, arithmetic)


def _gather_detections(cfg: PipelineConfig, fused: FusedFrame, diag: FrameDiagnostics):
    """Pool calibrated detections of all radars: ids, local indices, xz and projected x."""
    radar_ids, local_idx, xz, projected = [], [], [], []
    uncalibrated = []
    for snap in fused.radar_snapshots:
        setup = cfg.setup(snap.radar_id)
        if setup is None:
            logger.warning("tick %d: snapshot from unconfigured radar %d ignored", fused.tick,
                           snap.radar_id)
            continue
        if not setup.calibrated:
            uncalibrated.append(setup.radar_id)
        if not snap.detections:
            continue
        raw = np.array([(d.x, d.z) for d in snap.detections], dtype=float)
        cal = setup.calibration
        corrected = raw if cal.is_identity else apply_affine_many(cal, raw)
        keep = np.hypot(corrected[:, 0], corrected[:, 1]) > _ORIGIN_EPS
        if not np.all(keep):
            logger.warning("tick %d: radar %d reported a detection at the origin", fused.tick,
                           setup.radar_id)
        kept = np.flatnonzero(keep)
        if len(kept) == 0:
            continue
        corrected = corrected[kept]
        radar_ids.append(np.full(len(kept), setup.radar_id))
        local_idx.append(kept)
        xz.append(corrected)
        projected.append(radar_to_image_many(setup.image_map, corrected))

    diag.uncalibrated_radars = tuple(uncalibrated)
    if not xz:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 2)), np.zeros(0)
    return (
        np.concatenate(radar_ids),
        np.concatenate(local_idx),
        np.concatenate(xz),
        np.concatenate(projected),
    )


def run_frame(
    cfg: PipelineConfig,
    fused: FusedFrame,
    poses: Sequence[Pose2D],
    lifter: BaseLifter,
    *,
    tick: Optional[int] = None,
    frame_id: Optional[int] = None,
) -> FrameResult:
    """
    Fuse one synchronized frame.

    ``tick`` is the tick the poses were captured at; a mismatch with the
    fused frame raises SyncError. Per-person failures are recorded in the
    diagnostics and never abort the frame.
    """
    if tick is not None and tick != fused.tick:
        raise SyncError(f"poses from tick {tick} cannot be fused with frame of tick {fused.tick}")
    frame_id = fused.tick if frame_id is None else frame_id
    cam = cfg.camera
    width = cam.width_px
    diag = FrameDiagnostics(tick=fused.tick, frame_id=frame_id, missing_radars=fused.missing)

    start = time.perf_counter_ns()
    det_radar, det_local, det_xz, det_u = _gather_detections(cfg, fused, diag)
    n_poses = len(poses)
    if n_poses == 0:
        diag.unmatched_detections = tuple(zip(det_radar.tolist(), det_local.tolist()))
        diag.fusion_core_us = (time.perf_counter_ns() - start) / 1000.0
        return FrameResult(placements=(), diagnostics=diag)

    kp = np.stack([p.keypoints for p in poses])
    visible = kp[..., 2] > 0
    mean_x = _mean_x_batch(kp[..., 0], visible, width)
    assignment = match_people(
        [CameraCandidate(i, float(mean_x[i])) for i in range(n_poses)],
        [
            RadarCandidate(k, float(det_u[k]), (float(det_xz[k, 0]), float(det_xz[k, 1])))
            for k in range(len(det_u))
        ],
        cfg.matching_threshold_px,
        width,
    )
    view_uv, view_azimuth, view_elevation, view_ok = perspective_arrays(
        kp[..., :2], visible, cam
    )
    normalized, radius, norm_ok = normalize_arrays(view_uv, visible)
    norm_ok &= view_ok
    # normalization radius in tangent units
    image_radius = np.where(norm_ok, radius, 1.0) * TWO_PI / width

    pose_idx = np.array([p.pose_index for p in assignment.pairs], dtype=int)
    det_idx = np.array([p.detection_index for p in assignment.pairs], dtype=int)
    radar_xz = det_xz[det_idx]
    if cfg.scale_mode == "radar":
        distance = np.hypot(radar_xz[:, 0], radar_xz[:, 1]) / np.cos(view_elevation[pose_idx])
        world_scale = distance / cfg.c
    else:
        world_scale = cfg.world_scale / image_radius[pose_idx]
    core_ns = time.perf_counter_ns() - start

    diag.unmatched_poses = assignment.unmatched_poses
    diag.unmatched_detections = tuple(
        (int(det_radar[k]), int(det_local[k])) for k in assignment.unmatched_detections
    )

    # lifter stand-in: outside the timed core
    lifted_rows, offsets = [], []
    for row, (i, k) in enumerate(zip(pose_idx, det_idx)):
        hint = poses[i].person_hint
        person_id = hint if hint is not None else int(i)
        if not norm_ok[i]:
            reason = _norm_reason(visible[i], bool(view_ok[i]))
            diag.errors.append(PersonError(int(i), hint, "normalize", reason))
            logger.warning("frame %d: pose %d skipped: %s", frame_id, i, reason)
            continue
        pose_norm = NormalizedPose2D(
            keypoints=normalized[i],
            occlusion_mask=~visible[i],
            norm_record=NormRecord(
                root_px=(float(view_uv[i, ROOT, 0]), float(view_uv[i, ROOT, 1])),
                scale_px_per_unit=float(radius[i]),
            ),
            person_hint=hint,
        )
        context = LiftContext(
            frame_id=frame_id,
            person_id=person_id,
            c=cfg.c,
            camera=cam,
            view=PerspectiveView(
                float(view_azimuth[i]), float(view_elevation[i]), width / TWO_PI
            ),
        )
        try:
            d = np.asarray(lifter.lift(pose_norm, context), dtype=float)
            if d.shape != (N_JOINTS,) or not np.all(np.isfinite(d)):
                raise OmnifuseError(f"lifter returned invalid offsets of shape {d.shape}")
        except Exception as exc:
            logger.exception("frame %d: lifting pose %d failed", frame_id, i)
            diag.errors.append(PersonError(int(i), hint, "lift", str(exc)))
            continue
        lifted_rows.append(row)
        offsets.append(d)

    start = time.perf_counter_ns()
    rows = np.array(lifted_rows, dtype=int)
    placed = np.zeros((0, N_JOINTS, 3))
    if len(rows):
        local = lift_arrays(normalized[pose_idx[rows]], np.stack(offsets), cfg.c)
        lifted = pose_idx[rows]
        placed = place_arrays(
            local,
            cfg.c,
            radar_xz[rows],
            world_scale[rows],
            view_axes(view_azimuth[lifted], view_elevation[lifted]),
            image_radius[lifted],
        )
    core_ns += time.perf_counter_ns() - start
    diag.fusion_core_us = core_ns / 1000.0
    diag.matched = len(rows)

    placements = []
    for out, row in enumerate(rows):
        i, k = int(pose_idx[row]), int(det_idx[row])
        hint = poses[i].person_hint
        placements.append(
            Placement(
                pose_index=i,
                person_hint=hint,
                radar_id=int(det_radar[k]),
                detection_index=int(det_local[k]),
                mean_x=float(mean_x[i]),
                projected_x=float(det_u[k]),
                world_scale=float(world_scale[row]),
                pose=GlobalPose3D(
                    keypoints=placed[out], person_id=hint, source_radar=int(det_radar[k])
                ),
            )
        )
    return FrameResult(placements=tuple(placements), diagnostics=diag)


def _norm_reason(visible: np.ndarray, in_view: bool = True) -> str:
    if not visible[ROOT]:
        return "pelvis keypoint is occluded"
    if not in_view:
        return "a detected keypoint falls outside the pelvis view"
    if np.count_nonzero(visible) < 2:
        return "need at least 2 detected keypoints to normalize"
    return "detected keypoints all coincide with the pelvis"


class FusionPipeline:
    """run_frame bound to a config and lifter, collecting per-frame results."""

    def __init__(self, cfg: PipelineConfig, lifter: BaseLifter):
        self.cfg = cfg
        self.lifter = lifter
        self.results: List[FrameResult] = []

    def process(
        self,
        fused: FusedFrame,
        poses: Sequence[Pose2D],
        *,
        tick: Optional[int] = None,
        frame_id: Optional[int] = None,
    ) -> FrameResult:
        result = run_frame(self.cfg, fused, poses, self.lifter, tick=tick, frame_id=frame_id)
        self.results.append(result)
        return result

    @property
    def latencies_us(self) -> np.ndarray:
        return np.array([r.diagnostics.fusion_core_us for r in self.results])


# Calibration files


def save_radar_calibration(
    path, calibration: AffineCalibration, image_map: Optional[RadarImageMap] = None
):
    document: Dict[str, Any] = {
        "radar_id": calibration.radar_id,
        "calibration": calibration.to_dict(),
    }
    if image_map is not None:
        document["image_map"] = image_map.to_dict()
    return write_json(path, document)


def load_radar_calibration(path) -> Tuple[AffineCalibration, Optional[RadarImageMap]]:
    data = read_json(path)
    try:
        calibration = AffineCalibration.from_dict(data["calibration"])
        image_map = RadarImageMap.from_dict(data["image_map"]) if "image_map" in data else None
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, None, f"malformed calibration document: {exc}") from exc
    return calibration, image_map


def build_pipeline_config(config: OmnifuseConfig) -> PipelineConfig:
    """
    Resolve the run configuration into a PipelineConfig.

    Radars without a calibration file run uncorrected with the analytic
    image map, and are reported as uncalibrated in every frame.
    """
    cam = config.camera
    setups = []
    for entry in config.radars:
        rid = entry.radar.radar_id
        if entry.calibration_path is None:
            logger.warning("radar %d has no calibration; using identity correction", rid)
            setups.append(
                RadarSetup(rid, AffineCalibration.identity(rid), RadarImageMap.from_camera(cam),
                           calibrated=False)
            )
            continue
        calibration, image_map = load_radar_calibration(entry.calibration_path)
        if calibration.radar_id != rid:
            raise ConfigError(
                f"{entry.calibration_path} holds radar {calibration.radar_id}, expected {rid}"
            )
        if image_map is not None and image_map.width_px != cam.width_px:
            raise ConfigError(f"{entry.calibration_path}: image map width differs from camera")
        setups.append(RadarSetup(rid, calibration, image_map or RadarImageMap.from_camera(cam)))

    settings = config.pipeline
    return PipelineConfig(
        camera=cam,
        radars=tuple(setups),
        matching_threshold_px=settings.matching_threshold_px,
        c=settings.c,
        world_scale=settings.world_scale,
        scale_mode=settings.scale_mode,
    )


def heatmap_samples(
    frames: Sequence[SceneFrame], calibration: AffineCalibration
) -> List[Tuple[Tuple[float, float], Tuple[float, float]]]:
    """(true ground xz, corrected detection xz) pairs of one radar over a scene."""
    samples = []
    for sf in frames:
        truth = {p.person_id: tuple(p.ground_xz) for p in sf.truth}
        for record in sf.radars:
            if record.radar_id != calibration.radar_id or len(record.detections) == 0:
                continue
            corrected = apply_affine_many(calibration, record.detections)
            for xz, pid in zip(corrected, record.truth_person):
                if pid in truth:
                    samples.append((truth[pid], (float(xz[0]), float(xz[1]))))
    return samples


# Drivers


def _scene_poses(sf: SceneFrame) -> List[Pose2D]:
    return [Pose2D(keypoints=p.keypoints, person_hint=p.person_hint) for p in sf.poses]


def _scene_detections(record) -> List[RadarDetection]:
    return [RadarDetection(float(x), float(z)) for x, z in record.detections]


def replay_scene(
    cfg: PipelineConfig,
    frames: Sequence[SceneFrame],
    lifter: BaseLifter,
    *,
    queue_capacity: int = 8,
    timeout_s: float = 0.05,
) -> List[FrameResult]:
    """
    Single-threaded deterministic replay through a SensorHub on a virtual clock.

    Radars configured but absent from a scene frame yield Partial frames.
    """
    hub = SensorHub(
        cfg.radar_ids,
        queue_capacity=queue_capacity,
        timeout_s=timeout_s,
        backpressure=Backpressure.BLOCK,
        clock=VirtualClock(),
    )
    pipeline = FusionPipeline(cfg, lifter)
    configured = set(cfg.radar_ids)
    ignored = set()

    for sf in frames:
        tick = hub.tick(camera_payload=sf.frame)
        for record in sf.radars:
            if record.radar_id not in configured:
                if record.radar_id not in ignored:
                    logger.warning("scene radar %d is not configured; ignored", record.radar_id)
                    ignored.add(record.radar_id)
                continue
            hub.submit_snapshot(record.radar_id, tick, _scene_detections(record))
        hub.assemble(tick)
        fused = hub.next_frame(timeout=0)
        pipeline.process(fused, _scene_poses(sf), tick=tick, frame_id=sf.frame)

    logger.info("Replayed %d frames", len(frames))
    return pipeline.results


def run_live_simulation(
    cfg: PipelineConfig,
    frames: Sequence[SceneFrame],
    lifter: BaseLifter,
    *,
    queue_capacity: int = 8,
    timeout_s: float = 0.05,
    backpressure: Backpressure = Backpressure.BLOCK,
    max_latency_s: float = 0.01,
    frame_period_s: float = 0.0,
    publish_timeout_s: float = 5.0,
    seed: int = 0,
) -> List[FrameResult]:
    """
    Threaded run: one producer thread per radar, the calling thread as camera,
    and a consumer thread running the pipeline.

    Radar threads answer each snapshot request after a random delay in
    [0, max_latency_s); answers later than the timeout become Partial frames.
    Under BLOCK backpressure the camera waits at most ``publish_timeout_s``
    for queue space.

    Raises
    ------
    StalledConsumerError
        The consumer neither failed nor freed queue space in time.
    OmnifuseError
        The consumer thread failed; the original exception is chained.
    """
    hub = SensorHub(
        cfg.radar_ids, queue_capacity=queue_capacity, timeout_s=timeout_s,
        backpressure=backpressure, publish_timeout_s=publish_timeout_s,
    )
    pipeline = FusionPipeline(cfg, lifter)
    by_frame = {sf.frame: sf for sf in frames}
    done = threading.Event()
    consumer_failed = threading.Event()
    failure: List[BaseException] = []

    def radar_worker(radar_id: int) -> None:
        rng = np.random.default_rng([seed, radar_id])
        channel = hub.requests(radar_id)
        while not done.is_set():
            try:
                request = channel.get(timeout=0.05)
            except queue.Empty:
                continue
            time.sleep(rng.uniform(0.0, max_latency_s))
            sf = by_frame.get(hub.open_payload(request.tick))
            detections = []
            if sf is not None:
                for record in sf.radars:
                    if record.radar_id == radar_id:
                        detections = _scene_detections(record)
            hub.submit_snapshot(radar_id, request.tick, detections)

    def consumer() -> None:
        try:
            while True:
                fused = hub.next_frame(timeout=0.1)
                if fused is None:
                    if not hub.running:
                        return
                    continue
                sf = by_frame[fused.camera_payload]
                pipeline.process(fused, _scene_poses(sf), tick=fused.tick, frame_id=sf.frame)
        except Exception as exc:
            logger.exception("pipeline consumer failed")
            failure.append(exc)
            consumer_failed.set()
            # wakes a camera blocked on a full queue
            hub.stop()

    workers = [
        threading.Thread(target=radar_worker, args=(rid,), name=f"radar-{rid}", daemon=True)
        for rid in cfg.radar_ids
    ]
    consumer_thread = threading.Thread(target=consumer, name="pipeline", daemon=True)
    for t in workers:
        t.start()
    consumer_thread.start()

    try:
        for sf in frames:
            if consumer_failed.is_set():
                break
            try:
                tick = hub.tick(camera_payload=sf.frame)
            except LifecycleError:
                if consumer_failed.is_set():
                    break
                raise
            hub.assemble(tick)
            if frame_period_s:
                time.sleep(frame_period_s)
        while hub.pending_frames() and consumer_thread.is_alive():
            time.sleep(0.001)
    finally:
        hub.stop()
        done.set()
        consumer_thread.join(timeout=max(1.0, publish_timeout_s))
        if consumer_thread.is_alive():
            logger.warning("pipeline consumer still busy after shutdown")
        for t in workers:
            t.join()

    if failure:
        raise OmnifuseError(f"pipeline consumer failed: {failure[0]}") from failure[0]
    logger.info(
        "Live simulation: %d frames, %d partial, %d dropped",
        len(pipeline.results), hub.stats.partial_frames, hub.stats.dropped_frames,
    )
    return pipeline.results


# Evaluation


def placement_records(
    results: Sequence[FrameResult], frames: Optional[Sequence[SceneFrame]] = None
) -> List[PlacedPoseRecord]:
    """Rows of the poses JSONL; the scenario comes from the scene truth when available."""
    scenarios: Dict[Tuple[int, Any], str] = {}
    for sf in frames or ():
        for person in sf.truth:
            scenarios[(sf.frame, person.person_id)] = person.scenario

    records = []
    for result in results:
        frame = result.diagnostics.frame_id
        for p in result.placements:
            records.append(
                PlacedPoseRecord(
                    frame=frame,
                    person_hint=p.person_hint,
                    source_radar=p.radar_id,
                    detection_index=p.detection_index,
                    mean_x=p.mean_x,
                    projected_x=p.projected_x,
                    root_xz=p.pose.root_xz,
                    keypoints=p.pose.keypoints,
                    scenario=scenarios.get((frame, p.person_hint), "none"),
                )
            )
    return records


@dataclass
class EvaluationReport:
    poses_evaluated: int = 0
    matching_accuracy_pct: float = float("nan")
    localization_mae_cm: Dict[str, float] = field(default_factory=dict)
    per_scenario: Dict[str, PoseErrorReport] = field(default_factory=dict)
    matching_error: Dict[int, MatchingErrorSummary] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "poses_evaluated": self.poses_evaluated,
            "matching_accuracy_pct": _finite(self.matching_accuracy_pct),
            "localization_mae_cm": {k: _finite(v) for k, v in self.localization_mae_cm.items()},
            "per_scenario": {k: v.to_dict() for k, v in sorted(self.per_scenario.items())},
            "matching_error": [
                self.matching_error[k].to_dict() for k in sorted(self.matching_error)
            ],
        }

    def add_rows(self, table: "_Table") -> None:
        mae = self.localization_mae_cm
        table.row("Matching accuracy", f"{_fmt(self.matching_accuracy_pct)} %")
        table.row("Localization MAE", f"x {_fmt(mae.get('x'))} cm", f"z {_fmt(mae.get('z'))} cm")
        for rid in sorted(self.matching_error):
            err = self.matching_error[rid]
            table.row(f"Matching error r{rid}", f"mean {_fmt(err.mean)} %", f"std {_fmt(err.std)} %",
                      f"n {len(err.errors_pct)}")
        table.rule()
        table.row("Scenario", "MPJPE mm", "N-MPJPE mm", "PA-MPJPE mm")
        table.rule()
        for key in sorted(self.per_scenario):
            rep = self.per_scenario[key]
            table.row(rep.scenario.label, _fmt(rep.mpjpe_mm), _fmt(rep.n_mpjpe_mm),
                      _fmt(rep.pa_mpjpe_mm))

    def summary(self) -> str:
        table = _Table("POSE EVALUATION")
        table.banner(f"Poses evaluated: {self.poses_evaluated}")
        self.add_rows(table)
        return table.render()


def _finite(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def evaluate_placements(
    records: Sequence[PlacedPoseRecord], frames: Sequence[SceneFrame]
) -> EvaluationReport:
    """
    Compare placed poses with the scene truth.

    Matching accuracy counts, over every camera person that some radar
    detected, how many were placed from one of their own detections.
    """
    truth: Dict[Tuple[int, Any], Any] = {}
    detected: Dict[Tuple[int, int, int], Any] = {}
    detectable = set()
    for sf in frames:
        for person in sf.truth:
            truth[(sf.frame, person.person_id)] = person
        camera_people = {p.person_hint for p in sf.poses}
        for radar in sf.radars:
            for k, pid in enumerate(radar.truth_person):
                detected[(sf.frame, radar.radar_id, k)] = pid
                if pid in camera_people:
                    detectable.add((sf.frame, pid))

    report = EvaluationReport()
    correct = 0
    pairs_by_scenario: Dict[str, List[Tuple[np.ndarray, np.ndarray]]] = {}
    localization = []
    for rec in records:
        source = detected.get((rec.frame, rec.source_radar, rec.detection_index))
        if source is not None and source == rec.person_hint:
            correct += 1
        if rec.mean_x != 0:
            report.matching_error.setdefault(
                rec.source_radar, MatchingErrorSummary(rec.source_radar)
            ).errors_pct.append(matching_error_pct(rec.projected_x, rec.mean_x))
        person = truth.get((rec.frame, rec.person_hint))
        if person is None:
            continue
        pairs_by_scenario.setdefault(person.scenario, []).append((rec.keypoints, person.skeleton))
        localization.append((rec.root_xz, person.ground_xz))

    report.poses_evaluated = len(localization)
    if detectable:
        report.matching_accuracy_pct = 100.0 * correct / len(detectable)
    if localization:
        report.localization_mae_cm = {
            "x": localization_mae(localization, Axis.X),
            "z": localization_mae(localization, Axis.Z),
        }
    report.per_scenario = {
        scenario: PoseErrorReport.from_pairs(pairs, OcclusionScenario(scenario))
        for scenario, pairs in pairs_by_scenario.items()
    }
    return report


@dataclass
class RunReport:
    frames_processed: int = 0
    people_placed: int = 0
    partial_frames: int = 0
    person_errors: int = 0
    latency_p50_us: float = float("nan")
    latency_p95_us: float = float("nan")
    evaluation: EvaluationReport = field(default_factory=EvaluationReport)
    poses_file: Optional[str] = None
    poses_sha256: Optional[str] = None
    environment: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_results(
        cls, results: Sequence[FrameResult], evaluation: Optional[EvaluationReport] = None
    ) -> "RunReport":
        latencies = np.array([r.diagnostics.fusion_core_us for r in results])
        return cls(
            frames_processed=len(results),
            people_placed=sum(len(r.placements) for r in results),
            partial_frames=sum(1 for r in results if r.diagnostics.missing_radars),
            person_errors=sum(len(r.diagnostics.errors) for r in results),
            latency_p50_us=float(np.percentile(latencies, 50)) if len(latencies) else float("nan"),
            latency_p95_us=float(np.percentile(latencies, 95)) if len(latencies) else float("nan"),
            evaluation=evaluation or EvaluationReport(),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frames_processed": self.frames_processed,
            "people_placed": self.people_placed,
            "partial_frames": self.partial_frames,
            "person_errors": self.person_errors,
            "latency_p50_us": _finite(self.latency_p50_us),
            "latency_p95_us": _finite(self.latency_p95_us),
            "evaluation": self.evaluation.to_dict(),
            "poses_file": self.poses_file,
            "poses_sha256": self.poses_sha256,
            **self.environment,
        }

    def summary(self) -> str:
        table = _Table("FUSION RUN REPORT")
        table.banner(
            f"Frames: {self.frames_processed}   Placed: {self.people_placed}   "
            f"Partial: {self.partial_frames}   Errors: {self.person_errors}"
        )
        table.row(
            "Fusion core latency",
            f"p50 {_fmt(self.latency_p50_us, '{:.1f}')} us",
            f"p95 {_fmt(self.latency_p95_us, '{:.1f}')} us",
        )
        self.evaluation.add_rows(table)
        return table.render()


def _fmt(value: Optional[float], pattern: str = "{:.2f}") -> str:
    return pattern.format(value) if value is not None and math.isfinite(value) else "-"


class _Table:
    width = 78

    def __init__(self, title: str):
        self.lines = [
            "┌" + "─" * self.width + "┐",
            "│" + title.center(self.width) + "│",
        ]

    def rule(self) -> None:
        self.lines.append("├" + "─" * self.width + "┤")

    def banner(self, text: str) -> None:
        self.rule()
        self.lines.append("│" + text.center(self.width) + "│")
        self.rule()

    def row(self, col1: str, col2: str = "", col3: str = "", col4: str = "") -> None:
        self.lines.append(f"│ {col1[:22]:<22} │ {col2:>15} │ {col3:>15} │ {col4:>15} │")

    def render(self) -> str:
        return "\n".join(self.lines + ["└" + "─" * self.width + "┘"])
