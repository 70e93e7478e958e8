"""
Deterministic synthetic world.

People stand on the ground plane around the camera, each instantiated from
the canonical skeleton and turned to face the camera. Radars are co-located
with the camera and report each person's planar position through an optional
affine bias plus Gaussian noise that grows toward the edge of their field of
view. The camera reports equirectangular keypoints with optional pixel noise
and occlusion masks.

Every output is a pure function of (config, seed, frame): each random stream
is a fresh ``numpy.random.default_rng`` keyed on those values.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from omnifuse.calibration import (
    GRID_SPACING_M,
    AffineCalibration,
    GridRecording,
    RadarDetection,
    apply_affine_many,
)
from omnifuse.errors import ConfigError, DomainError, InputError
from omnifuse.geometry import (
    TWO_PI,
    CameraModel,
    Pose2D,
    direction_from_angles,
    project_points,
    unproject_pixels,
    wrap_angle,
)
from omnifuse.matching import mean_image_x
from omnifuse.records import (
    GridRow,
    ImageSample,
    PersonRecord,
    PoseRecord,
    RadarFrameRecord,
    SceneFrame,
)
from omnifuse.skeleton import (
    ANKLES,
    CANONICAL_TEMPLATE,
    N_JOINTS,
    OcclusionScenario,
    occlusion_mask,
)

logger = logging.getLogger(__name__)

MAX_PEOPLE = 10
MIN_SEPARATION_M = 0.5
DEFAULT_FOV_RAD = TWO_PI / 3.0
PLACEMENT_ATTEMPTS = 1000
MIN_CONFIDENCE = 0.5

# random stream tags
_SCENE_STREAM = 0
_RADAR_STREAM = 1
_KEYPOINT_STREAM = 2
_GRID_STREAM = 3


class Trajectory(str, Enum):
    STATIC = "static"
    RANDOM_WALK = "random_walk"


@dataclass(frozen=True)
class SceneConfig:
    person_count: int = 3
    arena_radius: float = 6.0
    min_range: float = 2.0
    trajectory: Trajectory = Trajectory.STATIC
    step_std: float = 0.1
    duration_frames: int = 100
    seed: int = 0
    scenario: OcclusionScenario = OcclusionScenario.NONE

    def __post_init__(self):
        if not 1 <= self.person_count <= MAX_PEOPLE:
            raise ConfigError(f"person_count must be in 1..{MAX_PEOPLE}, got {self.person_count}")
        if not 0 <= self.min_range < self.arena_radius:
            raise ConfigError("need 0 <= min_range < arena_radius")
        if self.duration_frames < 1:
            raise ConfigError("duration_frames must be >= 1")
        if self.step_std < 0:
            raise ConfigError("step_std must be >= 0")
        object.__setattr__(self, "trajectory", Trajectory(self.trajectory))
        object.__setattr__(self, "scenario", OcclusionScenario(self.scenario))


@dataclass(frozen=True)
class RadarConfig:
    """
    One simulated radar at the camera position.

    ``void_zones`` are world-azimuth intervals (start, end), read
    counter-clockwise from start, in which the radar never reports anyone.
    """

    radar_id: int
    boresight_azimuth: float = 0.0
    fov: float = DEFAULT_FOV_RAD
    noise_base_std: float = 0.05
    noise_edge_factor: float = 2.0
    bias_matrix: Optional[np.ndarray] = None
    bias_translation: Optional[np.ndarray] = None
    void_zones: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        if not 0 < self.fov <= TWO_PI:
            raise ConfigError(f"radar {self.radar_id}: fov must be in (0, 2pi]")
        if self.noise_base_std < 0 or self.noise_edge_factor < 0:
            raise ConfigError(f"radar {self.radar_id}: noise parameters must be >= 0")
        object.__setattr__(self, "void_zones", tuple(tuple(z) for z in self.void_zones))

    @property
    def bias(self) -> AffineCalibration:
        """The distortion as an affine map (identity when unbiased)."""
        matrix = np.eye(2) if self.bias_matrix is None else np.asarray(self.bias_matrix, float)
        translation = (
            np.zeros(2) if self.bias_translation is None else np.asarray(self.bias_translation)
        )
        return AffineCalibration(radar_id=self.radar_id, matrix=matrix, translation=translation)

    def off_boresight(self, azimuth: float) -> float:
        return wrap_angle(azimuth - self.boresight_azimuth)

    def in_void(self, azimuth: float) -> bool:
        for start, end in self.void_zones:
            if (azimuth - start) % TWO_PI <= (end - start) % TWO_PI:
                return True
        return False

    def covers(self, azimuth: float) -> bool:
        return abs(self.off_boresight(azimuth)) <= self.fov / 2.0 and not self.in_void(azimuth)

    def noise_std(self, azimuth: float) -> float:
        off = abs(self.off_boresight(azimuth))
        return self.noise_base_std * (1.0 + (self.noise_edge_factor - 1.0) * off / (self.fov / 2.0))


@dataclass(frozen=True)
class PersonTruth:
    person_id: int
    ground_xz: Tuple[float, float]
    skeleton: np.ndarray
    scenario: OcclusionScenario = OcclusionScenario.NONE


@dataclass(frozen=True)
class FrameTruth:
    frame: int
    people: Tuple[PersonTruth, ...]


@dataclass(frozen=True)
class SceneTruth:
    """Ground truth per frame, looked up by frame id (ids need not start at 0 or be contiguous)."""

    seed: int
    frames: Tuple[FrameTruth, ...]
    _by_id: Dict[int, FrameTruth] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id: Dict[int, FrameTruth] = {}
        for frame_truth in self.frames:
            if frame_truth.frame in by_id:
                raise InputError(f"duplicate frame id {frame_truth.frame} in scene truth")
            by_id[frame_truth.frame] = frame_truth
        object.__setattr__(self, "_by_id", by_id)

    def frame(self, frame_id: int) -> FrameTruth:
        try:
            return self._by_id[frame_id]
        except KeyError:
            raise InputError(f"no ground truth for frame id {frame_id}") from None

    @property
    def frame_ids(self) -> Tuple[int, ...]:
        return tuple(f.frame for f in self.frames)

    def skeleton(self, frame: int, person_id: int) -> np.ndarray:
        for person in self.frame(frame).people:
            if person.person_id == person_id:
                return person.skeleton
        raise KeyError((frame, person_id))

    @classmethod
    def from_positions(
        cls,
        positions: Sequence[Sequence[Tuple[float, float]]],
        seed: int = 0,
        scenario: OcclusionScenario = OcclusionScenario.NONE,
    ) -> "SceneTruth":
        """Scene with the given per-frame ground positions; person ids follow list order."""
        frames = tuple(
            FrameTruth(
                frame=f,
                people=tuple(
                    PersonTruth(
                        person_id=i,
                        ground_xz=(float(x), float(z)),
                        skeleton=skeleton_at((x, z)),
                        scenario=OcclusionScenario(scenario),
                    )
                    for i, (x, z) in enumerate(frame_positions)
                ),
            )
            for f, frame_positions in enumerate(positions)
        )
        return cls(seed=seed, frames=frames)


def skeleton_at(ground_xz: Sequence[float]) -> np.ndarray:
    """Canonical skeleton standing at ``ground_xz`` and facing the camera."""
    x, z = float(ground_xz[0]), float(ground_xz[1])
    heading = math.atan2(x, z) if math.hypot(x, z) > 0 else 0.0
    lateral = np.array([math.cos(heading), 0.0, -math.sin(heading)])
    depth = np.array([math.sin(heading), 0.0, math.cos(heading)])
    t = CANONICAL_TEMPLATE
    return (
        np.array([x, 0.0, z])
        + np.outer(t[:, 0], lateral)
        + np.outer(t[:, 1], [0.0, 1.0, 0.0])
        + np.outer(t[:, 2], depth)
    )


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _sample_annulus(rng: np.random.Generator, inner: float, outer: float) -> np.ndarray:
    r = math.sqrt(rng.uniform(inner**2, outer**2))
    phi = rng.uniform(-math.pi, math.pi)
    return np.array([r * math.sin(phi), r * math.cos(phi)])


def _initial_positions(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    annulus = math.pi * (cfg.arena_radius**2 - cfg.min_range**2)
    if cfg.person_count * math.pi * (MIN_SEPARATION_M / 2.0) ** 2 > annulus:
        raise ConfigError(
            f"cannot place {cfg.person_count} people {MIN_SEPARATION_M} m apart "
            f"in an arena of radius {cfg.arena_radius} m"
        )

    placed: List[np.ndarray] = []
    for _ in range(PLACEMENT_ATTEMPTS * cfg.person_count):
        candidate = _sample_annulus(rng, cfg.min_range, cfg.arena_radius)
        if all(np.linalg.norm(candidate - p) >= MIN_SEPARATION_M for p in placed):
            placed.append(candidate)
            if len(placed) == cfg.person_count:
                return np.array(placed)
    raise ConfigError(
        f"could not place {cfg.person_count} people {MIN_SEPARATION_M} m apart "
        f"after {PLACEMENT_ATTEMPTS * cfg.person_count} attempts"
    )


def _inside(pos: np.ndarray, cfg: SceneConfig) -> bool:
    return cfg.min_range <= float(np.hypot(pos[0], pos[1])) <= cfg.arena_radius


def gen_scene(cfg: SceneConfig) -> SceneTruth:
    """
    Generate people positions for every frame.

    Random-walk steps that would leave the arena are reflected; if the
    reflected step also leaves it, the person stays put for that frame.
    """
    rng = _rng(cfg.seed, _SCENE_STREAM)
    positions = _initial_positions(cfg, rng)
    logger.debug("scene seed %d: placed %d people", cfg.seed, cfg.person_count)

    frames = []
    for f in range(cfg.duration_frames):
        if f > 0 and cfg.trajectory is Trajectory.RANDOM_WALK:
            steps = rng.normal(0.0, cfg.step_std, size=positions.shape)
            for i, step in enumerate(steps):
                if _inside(positions[i] + step, cfg):
                    positions[i] = positions[i] + step
                elif _inside(positions[i] - step, cfg):
                    positions[i] = positions[i] - step
        frames.append(
            FrameTruth(
                frame=f,
                people=tuple(
                    PersonTruth(
                        person_id=i,
                        ground_xz=(float(p[0]), float(p[1])),
                        skeleton=skeleton_at(p),
                        scenario=cfg.scenario,
                    )
                    for i, p in enumerate(positions)
                ),
            )
        )
    return SceneTruth(seed=cfg.seed, frames=tuple(frames))


def simulate_radar_with_truth(
    truth: SceneTruth, cfg: RadarConfig, frame: int
) -> List[Tuple[RadarDetection, int]]:
    """simulate_radar, keeping the id of the person behind each detection."""
    people = truth.frame(frame).people
    rng = _rng(truth.seed, _RADAR_STREAM, cfg.radar_id, frame)
    noise = rng.normal(0.0, 1.0, size=(len(people), 2))
    bias = cfg.bias

    out = []
    for person, unit in zip(people, noise):
        x, z = person.ground_xz
        if math.hypot(x, z) == 0:
            continue
        azimuth = math.atan2(x, z)
        if not cfg.covers(azimuth):
            continue
        biased = apply_affine_many(bias, np.array([x, z]))[0]
        reading = biased + cfg.noise_std(azimuth) * unit
        out.append((RadarDetection(float(reading[0]), float(reading[1])), person.person_id))
    return out


def simulate_radar(truth: SceneTruth, cfg: RadarConfig, frame: int) -> List[RadarDetection]:
    """Raw planar detections of one radar for one frame; no identities attached."""
    return [det for det, _ in simulate_radar_with_truth(truth, cfg, frame)]


def simulate_keypoints(
    truth: SceneTruth,
    cam: CameraModel,
    frame: int,
    detector_noise_px: float = 0.0,
    scenario: Optional[OcclusionScenario] = None,
) -> List[Pose2D]:
    """
    Equirectangular 2D poses for every person in the frame.

    Occluded joints keep their (noisy) projected position but get confidence 0.
    ``scenario`` overrides the per-person scenario stored in the truth.
    """
    if detector_noise_px < 0:
        raise InputError("detector_noise_px must be >= 0")
    people = truth.frame(frame).people
    rng = _rng(truth.seed, _KEYPOINT_STREAM, frame)

    poses = []
    for person in people:
        noise = rng.normal(0.0, detector_noise_px, size=(N_JOINTS, 2))
        confidence = rng.uniform(MIN_CONFIDENCE, 1.0, size=N_JOINTS)
        if math.hypot(*person.ground_xz) < 1e-9:
            logger.warning("frame %d: person %d stands at the camera; skipped", frame, person.person_id)
            continue
        try:
            uv = project_points(person.skeleton, cam) + noise
        except DomainError:
            logger.warning("frame %d: person %d not projectable; skipped", frame, person.person_id)
            continue
        uv[:, 0] = np.mod(uv[:, 0], cam.width_px)
        uv[:, 1] = np.clip(uv[:, 1], 0.0, cam.height_px)
        mask = occlusion_mask(scenario if scenario is not None else person.scenario)
        confidence[mask] = 0.0
        poses.append(
            Pose2D(keypoints=np.column_stack([uv, confidence]), person_hint=person.person_id)
        )
    return poses


def estimate_ground_position(pose: Pose2D, cam: CameraModel) -> Tuple[float, float]:
    """
    Re-estimate a person's ground (x, z) by intersecting the detected ankle
    rays with the ground plane and averaging the hits.
    """
    ankles = [a for a in ANKLES if pose.visible[a]]
    if not ankles:
        raise InputError("both ankles are occluded")
    angles = unproject_pixels(pose.uv[ankles], cam)
    if np.any(angles[:, 1] >= 0):
        raise DomainError("ankle ray does not hit the ground")
    rays = direction_from_angles(angles[:, 0], angles[:, 1])
    t = cam.height_m / -rays[:, 1]
    hits = cam.center + rays * t[:, None]
    x, _, z = hits.mean(axis=0)
    return float(x), float(z)


def covering_radars(azimuth: float, radars: Sequence[RadarConfig]) -> List[int]:
    return [r.radar_id for r in radars if r.covers(azimuth)]


def grid_points(
    radar: RadarConfig,
    lateral_steps: int = 5,
    range_steps: int = 5,
    near_m: float = 2.0,
    spacing: float = GRID_SPACING_M,
    lateral_shift: float = 0.0,
) -> np.ndarray:
    """Calibration grid with ``spacing`` steps, centered on the radar boresight."""
    half = (lateral_steps - 1) / 2.0
    lateral = (np.arange(lateral_steps) - half) * spacing + lateral_shift
    ranges = near_m + np.arange(range_steps) * spacing
    ll, rr = np.meshgrid(lateral, ranges, indexing="ij")
    sin_b, cos_b = math.sin(radar.boresight_azimuth), math.cos(radar.boresight_azimuth)
    x = rr * sin_b + ll * cos_b
    z = rr * cos_b - ll * sin_b
    return np.column_stack([x.ravel(), z.ravel()])


def simulate_grid_recordings(
    radar: RadarConfig,
    points: Optional[np.ndarray] = None,
    readings_per_point: int = 50,
    seed: int = 0,
) -> List[GridRecording]:
    """A person dwelling on each grid point while the radar records ``readings_per_point`` frames."""
    if readings_per_point < 1:
        raise InputError("readings_per_point must be >= 1")
    points = grid_points(radar) if points is None else np.asarray(points, dtype=float)
    rng = _rng(seed, _GRID_STREAM, radar.radar_id)
    bias = radar.bias

    recordings = []
    for point in points:
        azimuth = math.atan2(point[0], point[1])
        noise = rng.normal(0.0, radar.noise_std(azimuth), size=(readings_per_point, 2))
        readings = apply_affine_many(bias, point)[0] + noise
        recordings.append(
            GridRecording(
                radar_id=radar.radar_id,
                true_position=(float(point[0]), float(point[1])),
                readings=readings,
            )
        )
    return recordings


def grid_rows(
    recordings: Sequence[GridRecording], frame_period_s: float = 0.1
) -> List[GridRow]:
    """Flatten recordings into (radar_id, true_x, true_z, raw_x, raw_z, t) rows."""
    rows = []
    for rec in recordings:
        for k, (raw_x, raw_z) in enumerate(rec.readings):
            rows.append(
                GridRow(
                    radar_id=rec.radar_id,
                    true_x=rec.true_position[0],
                    true_z=rec.true_position[1],
                    raw_x=float(raw_x),
                    raw_z=float(raw_z),
                    t=k * frame_period_s,
                )
            )
    return rows


def simulate_image_samples(
    truth: SceneTruth,
    cam: CameraModel,
    radar: RadarConfig,
    calibration: Optional[AffineCalibration] = None,
    detector_noise_px: float = 0.0,
    frames: Optional[Sequence[int]] = None,
) -> List[ImageSample]:
    """
    Co-observations for fitting the radar -> image map: the corrected radar
    position of each detected person paired with their camera mean x.
    """
    calibration = calibration or AffineCalibration.identity(radar.radar_id)
    frames = truth.frame_ids if frames is None else frames

    samples = []
    for f in frames:
        poses = {
            p.person_hint: p
            for p in simulate_keypoints(truth, cam, f, detector_noise_px, OcclusionScenario.NONE)
        }
        for det, person_id in simulate_radar_with_truth(truth, radar, f):
            pose = poses.get(person_id)
            if pose is None:
                continue
            x, z = apply_affine_many(calibration, np.array(det.as_tuple()))[0]
            samples.append(
                ImageSample(
                    radar_id=radar.radar_id,
                    x=float(x),
                    z=float(z),
                    mean_x=mean_image_x(pose, cam.width_px),
                )
            )
    return samples


def build_scene_frames(
    truth: SceneTruth,
    cam: CameraModel,
    radars: Sequence[RadarConfig],
    detector_noise_px: float = 0.0,
) -> List[SceneFrame]:
    """Everything the pipeline replays: truth, per-radar detections and 2D poses per frame."""
    out = []
    for frame_truth in truth.frames:
        f = frame_truth.frame
        radar_records = []
        for radar in radars:
            hits = simulate_radar_with_truth(truth, radar, f)
            radar_records.append(
                RadarFrameRecord(
                    radar_id=radar.radar_id,
                    detections=np.array([d.as_tuple() for d, _ in hits]).reshape(-1, 2),
                    truth_person=tuple(pid for _, pid in hits),
                )
            )
        poses = simulate_keypoints(truth, cam, f, detector_noise_px)
        out.append(
            SceneFrame(
                frame=f,
                truth=tuple(
                    PersonRecord(
                        person_id=p.person_id,
                        ground_xz=p.ground_xz,
                        skeleton=p.skeleton,
                        scenario=p.scenario.value,
                    )
                    for p in frame_truth.people
                ),
                radars=tuple(radar_records),
                poses=tuple(
                    PoseRecord(person_hint=p.person_hint, keypoints=p.keypoints) for p in poses
                ),
            )
        )
    return out


def truth_from_scene_frames(frames: Sequence[SceneFrame], seed: int = 0) -> SceneTruth:
    """Rebuild a SceneTruth from a replayed scene dump (used by the oracle lifter)."""
    return SceneTruth(
        seed=seed,
        frames=tuple(
            FrameTruth(
                frame=sf.frame,
                people=tuple(
                    PersonTruth(
                        person_id=p.person_id,
                        ground_xz=tuple(p.ground_xz),
                        skeleton=np.asarray(p.skeleton, dtype=float),
                        scenario=OcclusionScenario(p.scenario),
                    )
                    for p in sf.truth
                ),
            )
            for sf in frames
        ),
    )


def default_radars(
    count: int = 3, noise_base_std: float = 0.05, noise_edge_factor: float = 2.0
) -> List[RadarConfig]:
    """``count`` radars with boresights evenly spread around the camera."""
    return [
        RadarConfig(
            radar_id=i,
            boresight_azimuth=wrap_angle(i * TWO_PI / count),
            noise_base_std=noise_base_std,
            noise_edge_factor=noise_edge_factor,
        )
        for i in range(count)
    ]

