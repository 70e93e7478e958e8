"""
tests/test_calibration.py

Tests for grid averaging, the Levenberg-Marquardt affine fit and the
learned radar -> image map.

Run with:
    pytest tests/test_calibration.py -v
"""

import math

import numpy as np
import pytest

from omnifuse.calibration import (
    AffineCalibration,
    GridRecording,
    GridSample,
    LMOptions,
    RadarImageMap,
    apply_affine,
    apply_affine_many,
    average_grid_readings,
    calibration_mae,
    fit_affine_closed_form,
    fit_affine_lm,
    fit_radar_to_image,
    group_grid_readings,
    radar_to_image_many,
    radar_to_image_x,
)
from omnifuse.errors import ConvergenceError, DegenerateFitError, InputError
from omnifuse.geometry import CameraModel, circular_difference, equirect_project, project_points
from omnifuse.simulator import RadarConfig, grid_points, simulate_grid_recordings

BIAS_MATRIX = np.array([[1.1, 0.02], [-0.01, 0.95]])
BIAS_TRANSLATION = np.array([0.10, -0.20])


def _radar(noise=0.05, matrix=BIAS_MATRIX, translation=BIAS_TRANSLATION):
    return RadarConfig(
        radar_id=0,
        noise_base_std=noise,
        bias_matrix=matrix,
        bias_translation=translation,
    )


def _samples(radar, seed=0, points=None, readings=50):
    recordings = simulate_grid_recordings(radar, points=points, readings_per_point=readings,
                                          seed=seed)
    return [average_grid_readings(r) for r in recordings]


# --------------- grid averaging ------------------------------------


def test_average_grid_readings_is_componentwise_mean():
    rec = GridRecording(radar_id=1, true_position=(1.0, 2.0),
                        readings=np.array([[1.0, 2.0], [3.0, 6.0]]))
    sample = average_grid_readings(rec)
    assert sample.raw == pytest.approx((2.0, 4.0))
    assert sample.true == (1.0, 2.0)


def test_average_grid_readings_rejects_empty_recording():
    rec = GridRecording(radar_id=1, true_position=(1.0, 2.0), readings=np.zeros((0, 2)))
    with pytest.raises(InputError):
        average_grid_readings(rec)


def test_grid_has_25_points_50cm_apart():
    points = grid_points(_radar())
    assert points.shape == (25, 2)
    spacing = np.diff(np.unique(np.round(points[:, 0], 9)))
    np.testing.assert_allclose(spacing, 0.5)


def test_group_grid_readings_buckets_by_radar_and_point():
    rows = [
        (0, 1.0, 2.0, 1.1, 2.1),
        (0, 1.0, 2.0, 0.9, 1.9),
        (0, 1.5, 2.0, 1.6, 2.0),
        (2, 1.0, 2.0, 1.0, 2.0),
    ]
    grouped = group_grid_readings(rows)
    assert sorted(grouped) == [0, 2]
    assert [len(r.readings) for r in grouped[0]] == [2, 1]
    assert average_grid_readings(grouped[0][0]).raw == pytest.approx((1.0, 2.0))


def test_group_grid_readings_enforces_the_lattice():
    radar = _radar(noise=0.0)
    rows = [
        (0, float(x), float(z), float(x), float(z))
        for x, z in grid_points(radar, lateral_steps=3, range_steps=3)
    ]
    assert len(group_grid_readings(rows)[0]) == 9

    rows[4] = (0, rows[4][1] + 0.1, rows[4][2], rows[4][3], rows[4][4])
    with pytest.raises(InputError, match="lattice"):
        group_grid_readings(rows)


# --------------- AffineCalibration ------------------------------------


def test_affine_rejects_singular_matrix():
    with pytest.raises(InputError):
        AffineCalibration(radar_id=0, matrix=[[1.0, 2.0], [2.0, 4.0]], translation=[0, 0])


def test_affine_inverse_undoes_correction():
    cal = AffineCalibration(radar_id=3, matrix=BIAS_MATRIX, translation=BIAS_TRANSLATION)
    points = np.random.default_rng(0).uniform(-5, 5, size=(20, 2))
    back = apply_affine_many(cal.inverse(), apply_affine_many(cal, points))
    np.testing.assert_allclose(back, points, atol=1e-12)
    assert apply_affine(AffineCalibration.identity(3), (1.5, -2.0)) == (1.5, -2.0)


def test_affine_dict_round_trip():
    cal = AffineCalibration(radar_id=3, matrix=BIAS_MATRIX, translation=BIAS_TRANSLATION,
                            fit_rms_m=0.01, sample_count=25, iterations=4)
    restored = AffineCalibration.from_dict(cal.to_dict())
    np.testing.assert_array_equal(restored.parameters, cal.parameters)
    assert restored.sample_count == 25
    assert restored.iterations == 4


# --------------- fit_affine_lm ------------------------------------


def test_lm_matches_closed_form_on_noiseless_grid():
    samples = _samples(_radar(noise=0.0))
    lm = fit_affine_lm(samples)
    oracle = fit_affine_closed_form(samples)
    assert np.max(np.abs(lm.parameters - oracle.parameters)) < 1e-6
    assert lm.fit_rms_m < 1e-6

    expected = _radar().bias.inverse()
    np.testing.assert_allclose(lm.matrix, expected.matrix, atol=1e-9)
    np.testing.assert_allclose(lm.translation, expected.translation, atol=1e-9)


def test_lm_is_independent_of_grid_point_order():
    samples = _samples(_radar(), seed=2)
    shuffled = [samples[i] for i in np.random.default_rng(5).permutation(len(samples))]
    a, b = fit_affine_lm(samples), fit_affine_lm(shuffled)
    np.testing.assert_allclose(a.parameters, b.parameters, atol=1e-9)


def test_lm_on_identity_grid_returns_identity():
    samples = [
        GridSample(raw=(x, z), true=(x, z)) for x in (-0.5, 0.0, 0.5) for z in (2.0, 2.5, 3.0)
    ]
    cal = fit_affine_lm(samples)
    np.testing.assert_allclose(cal.matrix, np.eye(2), atol=1e-9)
    np.testing.assert_allclose(cal.translation, np.zeros(2), atol=1e-9)
    assert cal.is_identity
    assert cal.iterations == 0


def test_lm_cost_history_strictly_decreases():
    lm = fit_affine_lm(_samples(_radar(), seed=4))
    history = np.array(lm.cost_history)
    assert len(history) >= 2
    assert np.all(np.diff(history) < 0)
    assert lm.iterations >= 1


def test_lm_per_axis_model_recovers_diagonal_bias():
    radar = _radar(noise=0.0, matrix=np.diag([1.2, 0.9]), translation=np.array([0.3, -0.1]))
    lm = fit_affine_lm(_samples(radar), LMOptions(model="per_axis"))
    assert lm.model == "per_axis"
    np.testing.assert_allclose(lm.matrix, np.diag([1 / 1.2, 1 / 0.9]), atol=1e-9)
    np.testing.assert_allclose(lm.translation, [-0.3 / 1.2, 0.1 / 0.9], atol=1e-9)


def test_lm_reports_best_iterate_when_out_of_iterations():
    samples = _samples(_radar(noise=0.0))
    with pytest.raises(ConvergenceError) as exc_info:
        fit_affine_lm(samples, LMOptions(max_iters=1))
    best = exc_info.value.best
    assert isinstance(best, AffineCalibration)
    assert best.cost_history[-1] < best.cost_history[0]


def test_lm_rejects_too_few_samples():
    samples = [GridSample(raw=(1.0, 2.0), true=(1.0, 2.0)), GridSample(raw=(2, 3), true=(2, 3))]
    with pytest.raises(DegenerateFitError):
        fit_affine_lm(samples)


def test_lm_rejects_collinear_samples():
    samples = [GridSample(raw=(t, 2 * t), true=(t, 2 * t)) for t in np.linspace(0, 2, 5)]
    with pytest.raises(DegenerateFitError):
        fit_affine_lm(samples)
    with pytest.raises(DegenerateFitError):
        fit_affine_closed_form(samples)


def test_lm_options_validate_model():
    with pytest.raises(InputError):
        LMOptions(model="projective")


def test_calibration_improves_held_out_error_over_100_seeds():
    radar = _radar()
    held_out_points = grid_points(radar, lateral_shift=0.25)
    improved = 0
    for seed in range(100):
        cal = fit_affine_lm(_samples(radar, seed=seed))
        held_out = _samples(radar, seed=seed + 10_000, points=held_out_points)
        before = sum(calibration_mae(AffineCalibration.identity(0), held_out))
        after = sum(calibration_mae(cal, held_out))
        improved += after < before
    assert improved >= 95


# --------------- radar -> image map ------------------------------------


def test_analytic_map_matches_camera_projection():
    cam = CameraModel(yaw_offset_rad=0.4)
    image_map = RadarImageMap.from_camera(cam)
    assert radar_to_image_x(image_map, (0.0, 3.0)) == pytest.approx(960.0 - 0.4 * 1920 / (2 * math.pi))
    assert radar_to_image_x(image_map, (math.sin(0.4), math.cos(0.4))) == pytest.approx(960.0)


def test_fit_radar_to_image_recovers_map_across_seam():
    cam = CameraModel(yaw_offset_rad=0.3)
    analytic = RadarImageMap.from_camera(cam)
    azimuths = np.linspace(-math.pi + 0.01, math.pi - 0.01, 40)
    xz = np.column_stack([4 * np.sin(azimuths), 4 * np.cos(azimuths)])
    observed = np.mod(radar_to_image_many(analytic, xz) + 15.0, cam.width_px)

    fitted = fit_radar_to_image(list(zip(xz, observed)), cam)
    assert fitted.slope_px_per_rad == pytest.approx(analytic.slope_px_per_rad)
    assert fitted.offset_px == pytest.approx(analytic.offset_px + 15.0)
    assert fitted.residual_rms_px < 1e-6
    np.testing.assert_allclose(radar_to_image_many(fitted, xz), observed, atol=1e-6)


def test_fitted_map_follows_camera_yaw():
    cam = CameraModel(yaw_offset_rad=math.pi / 4)
    azimuths = np.linspace(-2.5, 2.5, 30)
    heights = np.full(30, cam.height_m)
    points = np.column_stack([3 * np.sin(azimuths), heights, 3 * np.cos(azimuths)])
    observed = project_points(points, cam)[:, 0]

    fitted = fit_radar_to_image(list(zip(points[:, [0, 2]], observed)), cam)
    unrotated = RadarImageMap.from_camera(CameraModel())
    assert fitted.offset_px == pytest.approx(unrotated.offset_px - cam.width_px / 8, abs=1e-6)
    assert radar_to_image_x(fitted, (0.0, 3.0)) == pytest.approx(960.0 - 240.0, abs=1e-6)


def test_radar_to_image_x_is_continuous_across_the_seam():
    image_map = RadarImageMap.from_camera(CameraModel())
    delta = 1e-4
    below = radar_to_image_x(image_map, (math.sin(math.pi - delta), math.cos(math.pi - delta)))
    above = radar_to_image_x(image_map, (math.sin(delta - math.pi), math.cos(delta - math.pi)))
    assert below > 1919.0
    assert above < 1.0
    gap = float(circular_difference(below, above, 1920))
    assert gap == pytest.approx(-2 * delta * 1920 / (2 * math.pi), abs=1e-6)


def test_fitted_map_agrees_with_projection_on_random_points():
    cam = CameraModel(yaw_offset_rad=-0.7)
    rng = np.random.default_rng(11)

    def points(n):
        azimuth = rng.uniform(-math.pi, math.pi, n)
        r = rng.uniform(1.5, 8.0, n)
        return np.column_stack([r * np.sin(azimuth), rng.uniform(0.0, 2.0, n), r * np.cos(azimuth)])

    train = points(40)
    fitted = fit_radar_to_image(
        [(p[[0, 2]], equirect_project(p, cam)[0]) for p in train], cam
    )
    test = points(100)
    for p in test:
        u = equirect_project(p, cam)[0]
        error = circular_difference(radar_to_image_x(fitted, p[[0, 2]]), u, cam.width_px)
        assert abs(error) < 1.0


def test_fit_radar_to_image_needs_three_samples():
    with pytest.raises(DegenerateFitError):
        fit_radar_to_image([((1.0, 1.0), 100.0), ((1.0, 2.0), 120.0)], CameraModel())


def test_fit_radar_to_image_needs_distinct_azimuths():
    samples = [((1.0 * k, 1.0 * k), 1200.0) for k in (1, 2, 3)]
    with pytest.raises(DegenerateFitError):
        fit_radar_to_image(samples, CameraModel())


def test_image_map_dict_round_trip():
    image_map = RadarImageMap(slope_px_per_rad=300.0, offset_px=950.0, width_px=1920)
    assert RadarImageMap.from_dict(image_map.to_dict()) == image_map
