"""
tests/test_config.py

Tests for TOML run configuration loading and validation.

Run with:
    pytest tests/test_config.py -v
"""

import math

import pytest

from omnifuse.config import OmnifuseConfig, load_config, parse_config
from omnifuse.errors import ConfigError
from omnifuse.simulator import Trajectory
from omnifuse.sync import Backpressure


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg == OmnifuseConfig()
    assert cfg.camera.width_px == 1920
    assert [r.radar_id for r in cfg.radar_configs] == [0, 1, 2]
    assert cfg.pipeline.scale_mode == "radar"
    assert cfg.sync.timeout_s == pytest.approx(0.05)


def test_full_config_is_parsed(tmp_path):
    path = _write(
        tmp_path,
        """
seed = 7

[camera]
width_px = 3840
height_px = 1920

[scene]
person_count = 5
trajectory = "random_walk"

[[radars]]
radar_id = 4
boresight_deg = 90.0
fov_deg = 100.0
calibration = "calib/radar_4.json"

[pipeline]
scale_mode = "fixed"
world_scale = 0.1
detector_noise_px = 2.0

[lifter]
noise_std = 0.05

[sync]
timeout_ms = 20
backpressure = "drop_oldest"
""",
    )
    cfg = load_config(path)
    assert cfg.seed == 7
    assert cfg.camera.height_px == 1920
    assert cfg.scene.person_count == 5
    assert cfg.scene.trajectory is Trajectory.RANDOM_WALK
    assert cfg.scene.seed == 7
    (entry,) = cfg.radars
    assert entry.radar.radar_id == 4
    assert entry.radar.boresight_azimuth == pytest.approx(math.pi / 2)
    assert entry.radar.fov == pytest.approx(math.radians(100.0))
    assert entry.calibration_path == tmp_path / "calib" / "radar_4.json"
    assert cfg.pipeline.world_scale == 0.1
    assert cfg.lifter.noise_std == 0.05
    assert cfg.lifter.seed == 7
    assert cfg.sync.timeout_s == pytest.approx(0.02)
    assert cfg.sync.backpressure is Backpressure.DROP_OLDEST


def test_radar_id_defaults_to_position(tmp_path):
    cfg = load_config(_write(tmp_path, "[[radars]]\n\n[[radars]]\nboresight_azimuth = 3.0\n"))
    assert [r.radar_id for r in cfg.radar_configs] == [0, 1]
    assert cfg.radars[0].calibration_path is None


def test_lift_file_resolved_against_config_dir(tmp_path):
    cfg = load_config(
        _write(tmp_path, '[pipeline]\nlifter = "external"\nlift_file = "lifts.jsonl"\n')
    )
    assert cfg.pipeline.lift_file == tmp_path / "lifts.jsonl"


@pytest.mark.parametrize(
    "text",
    [
        "colour = 1\n",
        "[camera]\nwidth = 100\n",
        "[scene]\nperson_count = 11\n",
        "[camera]\nwidth_px = 1000\nheight_px = 1000\n",
        "[lifter]\nnoise_std = -1.0\n",
        '[pipeline]\nscale_mode = "guess"\n',
        '[pipeline]\nlifter = "external"\n',
        "[pipeline]\nc = 1.0\n",
        "[sync]\nqueue_capacity = 0\n",
        '[sync]\nbackpressure = "spill"\n',
        "seed = -1\n",
        "radars = []\n",
        "[[radars]]\nradar_id = 1\n\n[[radars]]\nradar_id = 1\n",
        "[[radars]]\nfov_deg = 0.0\n",
        "[[radars]]\nrange = 5.0\n",
        "camera = 3\n",
        "seed = \n",
    ],
)
def test_invalid_config_is_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


def test_parse_config_accepts_plain_dicts():
    cfg = parse_config({"scene": {"duration_frames": 12}})
    assert cfg.scene.duration_frames == 12


def test_with_seed_propagates():
    cfg = load_config(None).with_seed(42)
    assert (cfg.seed, cfg.scene.seed, cfg.lifter.seed) == (42, 42, 42)
    assert cfg.radars == OmnifuseConfig().radars
