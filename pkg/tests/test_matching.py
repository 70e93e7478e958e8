"""
tests/test_matching.py

Tests for mean image x, the seam-aware nearest-first matcher, the
azimuth-angle baseline and the matching error metric.

Run with:
    pytest tests/test_matching.py -v
"""

import itertools
import math

import numpy as np
import pytest

from omnifuse.calibration import RadarImageMap, fit_radar_to_image, radar_to_image_many
from omnifuse.errors import DomainError, InputError
from omnifuse.geometry import CameraModel, Pose2D
from omnifuse.matching import (
    CameraCandidate,
    MatchingErrorSummary,
    RadarCandidate,
    default_threshold_px,
    match_people,
    match_people_angle_baseline,
    matching_error_pct,
    mean_image_x,
)
from omnifuse.metrics import matching_accuracy
from omnifuse.simulator import (
    RadarConfig,
    SceneTruth,
    simulate_image_samples,
    simulate_keypoints,
    simulate_radar_with_truth,
)
from omnifuse.skeleton import N_JOINTS

W = 1920
CAM = CameraModel()


def _pose_at(u_values, conf=None):
    uv = np.column_stack([u_values, np.full(N_JOINTS, 480.0)])
    conf = np.ones(N_JOINTS) if conf is None else conf
    return Pose2D(keypoints=np.column_stack([uv, conf]))


def _cands(values):
    return [CameraCandidate(i, float(v)) for i, v in enumerate(values)]


def _radars(values):
    return [RadarCandidate(k, float(v), (0.0, 1.0)) for k, v in enumerate(values)]


# --------------- mean_image_x ------------------------------------


def test_mean_image_x_examples():
    assert mean_image_x(_pose_at(np.full(N_JOINTS, 100.0))) == 100.0
    assert mean_image_x(_pose_at(np.arange(N_JOINTS, dtype=float))) == 7.0


def test_mean_image_x_excludes_occluded_joints():
    u = np.full(N_JOINTS, 200.0)
    u[10:] = [5.0, 900.0, 1400.0, 33.0, 1700.0]
    conf = np.ones(N_JOINTS)
    conf[10:] = 0.0
    assert mean_image_x(_pose_at(u, conf)) == 200.0


def test_mean_image_x_wraps_across_seam():
    u = np.where(np.arange(N_JOINTS) % 2 == 0, 1915.0, 5.0)
    assert mean_image_x(_pose_at(u)) == pytest.approx(np.mean(u))
    wrapped = mean_image_x(_pose_at(u), width_px=W)
    assert min(wrapped, W - wrapped) < 5.0


# --------------- match_people ------------------------------------


def test_match_within_threshold():
    assignment = match_people(_cands([100.0]), _radars([102.0]), 10.0, W)
    assert assignment.pair_set() == {(0, 0)}
    assert assignment.pairs[0].distance == pytest.approx(2.0)


def test_threshold_cut_leaves_both_unmatched():
    assignment = match_people(_cands([100.0]), _radars([150.0]), 10.0, W)
    assert assignment.pairs == ()
    assert assignment.unmatched_poses == (0,)
    assert assignment.unmatched_detections == (0,)


def test_empty_inputs():
    assert match_people([], [], 10.0, W).pairs == ()
    assignment = match_people(_cands([10.0, 20.0]), [], 10.0, W)
    assert assignment.unmatched_poses == (0, 1)


def test_non_positive_threshold_rejected():
    with pytest.raises(InputError):
        match_people(_cands([1.0]), _radars([1.0]), 0.0, W)


def test_seam_distance_is_short_way():
    assignment = match_people(_cands([2.0]), _radars([W - 2.0]), 10.0, W)
    assert assignment.pairs[0].distance == pytest.approx(4.0)


def test_nearest_first_resolves_conflicts():
    # pose 1 is closer to the shared radar; pose 0 falls back to its second choice
    assignment = match_people(_cands([100.0, 108.0]), _radars([105.0, 92.0]), 20.0, W)
    assert assignment.pair_set() == {(1, 0), (0, 1)}


def test_equal_distances_go_to_lower_detection_index():
    assignment = match_people(_cands([100.0]), _radars([105.0, 95.0]), 10.0, W)
    assert assignment.pair_set() == {(0, 0)}
    assert assignment.unmatched_detections == (1,)


def test_one_to_one_and_threshold_on_random_inputs():
    rng = np.random.default_rng(0)
    for _ in range(200):
        poses = rng.uniform(0, W, size=rng.integers(0, 12))
        radars = rng.uniform(0, W, size=rng.integers(0, 12))
        threshold = float(rng.uniform(5, 300))
        assignment = match_people(_cands(poses), _radars(radars), threshold, W)
        pose_ids = [p.pose_index for p in assignment.pairs]
        det_ids = [p.detection_index for p in assignment.pairs]
        assert len(set(pose_ids)) == len(pose_ids)
        assert len(set(det_ids)) == len(det_ids)
        assert all(p.distance <= threshold for p in assignment.pairs)
        assert len(pose_ids) + len(assignment.unmatched_poses) == len(poses)
        assert len(det_ids) + len(assignment.unmatched_detections) == len(radars)


def test_permutation_invariance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        cands = _cands(rng.uniform(0, W, size=6))
        radars = _radars(rng.uniform(0, W, size=6))
        expected = match_people(cands, radars, 100.0, W).pair_set()
        shuffled = match_people(
            list(rng.permutation(cands)), list(rng.permutation(radars)), 100.0, W
        ).pair_set()
        assert shuffled == expected


def _circular(a, b):
    d = abs(a - b) % W
    return min(d, W - d)


def test_matches_exhaustive_optimum_when_unambiguous():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(300):
        poses = rng.uniform(0, W, size=5)
        radars = np.mod(poses + rng.normal(0, 40, size=5), W)
        dist = np.array([[_circular(p, r) for r in radars] for p in poses])

        assignment = match_people(_cands(poses), _radars(radars), float(W), W)
        greedy_total = sum(p.distance for p in assignment.pairs)
        optimum = min(
            sum(dist[i, perm[i]] for i in range(5)) for perm in itertools.permutations(range(5))
        )
        assert len(assignment.pairs) == 5
        assert greedy_total >= optimum - 1e-9

        mutual = all(
            np.argmin(dist[p.pose_index]) == p.detection_index
            and np.argmin(dist[:, p.detection_index]) == p.pose_index
            for p in assignment.pairs
        )
        if mutual:
            checked += 1
            assert greedy_total == pytest.approx(optimum)
    assert checked >= 50


# --------------- match_people_angle_baseline ------------------------------------


def _u_of(xz):
    return float(radar_to_image_many(RadarImageMap.from_camera(CAM), np.array(xz))[0])


def test_baseline_agrees_with_improved_on_exact_geometry():
    rng = np.random.default_rng(3)
    for _ in range(30):
        azimuths = rng.uniform(-math.pi, math.pi, size=4)
        xz = [(3 * math.sin(a), 3 * math.cos(a)) for a in azimuths]
        cands = [CameraCandidate(i, _u_of(p)) for i, p in enumerate(xz)]
        radars = [RadarCandidate(k, _u_of(p), p) for k, p in enumerate(xz)]
        improved = match_people(cands, radars, default_threshold_px(W), W)
        baseline = match_people_angle_baseline(cands, radars, CAM, 0.02 * 2 * math.pi)
        assert improved.pair_set() == baseline.pair_set()


def test_baseline_mismatches_biased_radar_that_improved_handles():
    bias = math.radians(5.0)
    people = [math.radians(0.0), math.radians(6.0)]
    true_xz = [(3 * math.sin(a), 3 * math.cos(a)) for a in people]
    raw_xz = [(3 * math.sin(a + bias), 3 * math.cos(a + bias)) for a in people]
    cands = [CameraCandidate(i, _u_of(p)) for i, p in enumerate(true_xz)]

    baseline = match_people_angle_baseline(
        cands, [RadarCandidate(k, 0.0, p) for k, p in enumerate(raw_xz)], CAM,
        0.02 * 2 * math.pi,
    )
    # calibrated projection puts each detection back on its person
    improved = match_people(
        cands, [RadarCandidate(k, _u_of(t), r) for k, (t, r) in enumerate(zip(true_xz, raw_xz))],
        default_threshold_px(W), W,
    )
    truth = {0: 0, 1: 1}
    assert matching_accuracy(improved, truth) == 100.0
    assert matching_accuracy(baseline, truth) < 100.0
    assert (1, 0) in baseline.pair_set()


def test_baseline_with_no_radars_leaves_poses_unmatched():
    assignment = match_people_angle_baseline(_cands([10.0, 900.0]), [], CAM, 0.1)
    assert assignment.unmatched_poses == (0, 1)


def _rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s], [-s, c]])


def _sector_scene(rng):
    count = int(rng.integers(2, 6))
    center = rng.uniform(-math.pi, math.pi)
    positions = []
    while len(positions) < count:
        azimuth = center + rng.uniform(-math.pi / 4, math.pi / 4)
        r = rng.uniform(2.5, 5.0)
        candidate = np.array([r * math.sin(azimuth), r * math.cos(azimuth)])
        if all(np.linalg.norm(candidate - p) >= 1.0 for p in positions):
            positions.append(candidate)
    return center, [tuple(p) for p in positions]


def test_improved_matching_beats_angle_baseline_over_100_scenes():
    rng = np.random.default_rng(2024)
    threshold_px = default_threshold_px(W)
    threshold_rad = threshold_px * CAM.radians_per_px

    # learned radar -> image map from a ring of people seen by camera and radar
    ring = [(3 * math.sin(a), 3 * math.cos(a)) for a in np.linspace(-math.pi, math.pi, 12,
                                                                      endpoint=False)]
    calibration_scene = SceneTruth.from_positions([ring])

    strictly_better = 0
    seam_scenes = 0
    for seed in range(100):
        bias = math.radians(rng.uniform(3.0, 8.0)) * rng.choice([-1.0, 1.0])
        radar = RadarConfig(radar_id=0, fov=2 * math.pi, noise_base_std=0.0,
                            bias_matrix=_rotation(bias))
        samples = simulate_image_samples(calibration_scene, CAM, radar)
        image_map = fit_radar_to_image([((s.x, s.z), s.mean_x) for s in samples], CAM)

        center, positions = _sector_scene(rng)
        seam_scenes += abs(center) > 3 * math.pi / 4
        truth = SceneTruth.from_positions([positions], seed=seed)
        poses = simulate_keypoints(truth, CAM, 0)
        detections = simulate_radar_with_truth(truth, radar, 0)

        cands = [CameraCandidate(i, mean_image_x(p, W)) for i, p in enumerate(poses)]
        raw = np.array([d.as_tuple() for d, _ in detections])
        projected = radar_to_image_many(image_map, raw)
        radars = [
            RadarCandidate(k, float(projected[k]), tuple(raw[k])) for k in range(len(raw))
        ]
        owner = {pid: k for k, (_, pid) in enumerate(detections)}
        expected = {i: owner[p.person_hint] for i, p in enumerate(poses)}

        improved = matching_accuracy(match_people(cands, radars, threshold_px, W), expected)
        baseline = matching_accuracy(
            match_people_angle_baseline(cands, radars, CAM, threshold_rad), expected
        )
        assert improved == 100.0
        assert improved >= baseline
        strictly_better += improved > baseline

    assert seam_scenes > 0
    assert strictly_better >= 30


# --------------- matching_error_pct ------------------------------------


def test_matching_error_pct_examples():
    assert matching_error_pct(102.0, 100.0) == pytest.approx(2.0)
    assert matching_error_pct(100.0, 100.0) == 0.0


def test_matching_error_pct_zero_camera_value():
    with pytest.raises(DomainError):
        matching_error_pct(5.0, 0.0)


def test_matching_error_summary():
    summary = MatchingErrorSummary(radar_id=2, errors_pct=[1.0, 3.0])
    assert summary.mean == 2.0
    assert summary.std == 1.0
    assert summary.to_dict()["count"] == 2
