"""
TOML run configuration.

Every key is optional; missing keys fall back to the module-level defaults of
the module that owns them. Relative file paths are resolved against the
directory holding the config file. Angles are radians; radar tables also
accept ``boresight_deg`` and ``fov_deg``.

Example::

    seed = 7

    [camera]
    width_px = 1920
    height_px = 960

    [scene]
    person_count = 5
    trajectory = "random_walk"

    [[radars]]
    radar_id = 0
    boresight_azimuth = 0.0
    calibration = "calib/radar_0.json"

    [pipeline]
    scale_mode = "radar"
    lifter = "oracle"

    [lifter]
    noise_std = 0.05

    [sync]
    timeout_ms = 50
"""

import logging
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from omnifuse.errors import ConfigError, InputError
from omnifuse.geometry import DEFAULT_C, CameraModel
from omnifuse.lifting import OracleLifterConfig
from omnifuse.simulator import RadarConfig, SceneConfig, default_radars
from omnifuse.sync import DEFAULT_QUEUE_CAPACITY, DEFAULT_TIMEOUT_S, Backpressure

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

SCALE_MODES = ("radar", "fixed")
LIFTERS = ("oracle", "external")
_TOP_LEVEL_KEYS = {"seed", "camera", "scene", "radars", "pipeline", "lifter", "sync"}


@dataclass(frozen=True)
class RadarEntry:
    radar: RadarConfig
    calibration_path: Optional[Path] = None


@dataclass(frozen=True)
class PipelineSettings:
    c: float = DEFAULT_C
    world_scale: Optional[float] = None
    scale_mode: str = "radar"
    matching_threshold_px: Optional[float] = None
    lifter: str = "oracle"
    lift_file: Optional[Path] = None
    detector_noise_px: float = 0.0

    def __post_init__(self):
        if not self.c > 1.0:
            raise ConfigError(f"pipeline.c must exceed 1, got {self.c}")
        if self.scale_mode not in SCALE_MODES:
            raise ConfigError(f"pipeline.scale_mode must be one of {SCALE_MODES}")
        if self.lifter not in LIFTERS:
            raise ConfigError(f"pipeline.lifter must be one of {LIFTERS}")
        if self.world_scale is not None and not self.world_scale > 0:
            raise ConfigError("pipeline.world_scale must be positive")
        if self.matching_threshold_px is not None and not self.matching_threshold_px > 0:
            raise ConfigError("pipeline.matching_threshold_px must be positive")
        if self.lifter == "external" and self.lift_file is None:
            raise ConfigError("pipeline.lifter = 'external' needs pipeline.lift_file")


@dataclass(frozen=True)
class SyncSettings:
    timeout_ms: float = DEFAULT_TIMEOUT_S * 1000.0
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    backpressure: Backpressure = Backpressure.BLOCK

    def __post_init__(self):
        if self.timeout_ms < 0:
            raise ConfigError("sync.timeout_ms must be >= 0")
        if not isinstance(self.queue_capacity, int) or self.queue_capacity < 1:
            raise ConfigError("sync.queue_capacity must be a positive integer")

    @property
    def timeout_s(self) -> float:
        return self.timeout_ms / 1000.0


@dataclass(frozen=True)
class OmnifuseConfig:
    seed: int = 0
    camera: CameraModel = field(default_factory=CameraModel)
    scene: SceneConfig = field(default_factory=SceneConfig)
    radars: Tuple[RadarEntry, ...] = field(
        default_factory=lambda: tuple(RadarEntry(r) for r in default_radars())
    )
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    lifter: OracleLifterConfig = field(default_factory=OracleLifterConfig)
    sync: SyncSettings = field(default_factory=SyncSettings)

    def with_seed(self, seed: int) -> "OmnifuseConfig":
        """Copy with ``seed`` propagated to the scene and the oracle lifter."""
        return OmnifuseConfig(
            seed=seed,
            camera=self.camera,
            scene=_replace(self.scene, seed=seed),
            radars=self.radars,
            pipeline=self.pipeline,
            lifter=_replace(self.lifter, seed=seed),
            sync=self.sync,
        )

    @property
    def radar_configs(self) -> List[RadarConfig]:
        return [entry.radar for entry in self.radars]


def _replace(obj, **changes):
    values = {f.name: getattr(obj, f.name) for f in fields(obj)}
    values.update(changes)
    return type(obj)(**values)


def _build(cls, table: Any, section: str, **extra):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**{**table, **extra})
    except ConfigError:
        raise
    except (InputError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}]: {exc}") from exc


def _resolve(base: Path, value: Optional[str]) -> Optional[Path]:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def _radar_entry(table: Any, index: int, base: Path) -> RadarEntry:
    section = f"radars[{index}]"
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    table = dict(table)
    calibration = _resolve(base, table.pop("calibration", None))
    table.setdefault("radar_id", index)
    if "fov_deg" in table:
        table["fov"] = math.radians(table.pop("fov_deg"))
    if "boresight_deg" in table:
        table["boresight_azimuth"] = math.radians(table.pop("boresight_deg"))
    return RadarEntry(radar=_build(RadarConfig, table, section), calibration_path=calibration)


def parse_config(data: Dict[str, Any], base_dir: Union[str, Path] = ".") -> OmnifuseConfig:
    base = Path(base_dir)
    unknown = set(data) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")

    pipeline_table = dict(data.get("pipeline", {}))
    if "lift_file" in pipeline_table:
        pipeline_table["lift_file"] = _resolve(base, pipeline_table["lift_file"])

    radar_tables = data.get("radars")
    radars = (
        tuple(_radar_entry(t, i, base) for i, t in enumerate(radar_tables))
        if radar_tables is not None
        else tuple(RadarEntry(r) for r in default_radars())
    )
    if not radars:
        raise ConfigError("at least one radar is required")
    ids = [entry.radar.radar_id for entry in radars]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate radar ids: {ids}")

    sync_table = dict(data.get("sync", {}))
    if "backpressure" in sync_table:
        try:
            sync_table["backpressure"] = Backpressure(sync_table["backpressure"])
        except ValueError as exc:
            raise ConfigError(f"invalid sync.backpressure: {exc}") from exc

    return OmnifuseConfig(
        seed=seed,
        camera=_build(CameraModel, data.get("camera", {}), "camera"),
        scene=_build(SceneConfig, data.get("scene", {}), "scene", seed=seed),
        radars=radars,
        pipeline=_build(PipelineSettings, pipeline_table, "pipeline"),
        lifter=_build(OracleLifterConfig, data.get("lifter", {}), "lifter", seed=seed),
        sync=_build(SyncSettings, sync_table, "sync"),
    )


def load_config(path: Union[str, Path, None]) -> OmnifuseConfig:
    """Load a TOML config; ``None`` gives the all-defaults configuration."""
    if path is None:
        return OmnifuseConfig()
    path = Path(path)
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    logger.info("Loaded config from %s", path)
    return parse_config(data, base_dir=path.parent)
