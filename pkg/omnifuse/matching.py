"""
Camera <-> radar person association.

People are compared on the equirectangular x axis only: the mean image x of a
detected 2D pose against the image x of each radar detection projected through
the learned radar -> image map. Radar values sit in an ordered search tree
(a bisect-sorted list); nearest-neighbour queries are circular because the
panorama wraps at its seam.

``match_people_angle_baseline`` is the earlier azimuth-angle method, kept as a
baseline for evaluation.
"""

import bisect
import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from omnifuse.errors import DomainError, InputError
from omnifuse.geometry import TWO_PI, CameraModel, Pose2D, azimuth_of, equirect_unproject

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD_FRACTION = 0.02


@dataclass(frozen=True)
class CameraCandidate:
    pose_index: int
    mean_x: float


@dataclass(frozen=True)
class RadarCandidate:
    detection_index: int
    projected_x: float
    world_xz: Tuple[float, float]


@dataclass(frozen=True)
class MatchedPair:
    pose_index: int
    detection_index: int
    distance: float


@dataclass(frozen=True)
class Assignment:
    pairs: Tuple[MatchedPair, ...] = ()
    unmatched_poses: Tuple[int, ...] = ()
    unmatched_detections: Tuple[int, ...] = ()

    def pair_set(self) -> frozenset:
        return frozenset((p.pose_index, p.detection_index) for p in self.pairs)


def default_threshold_px(width_px: int) -> float:
    return DEFAULT_THRESHOLD_FRACTION * width_px


def mean_image_x(pose: Pose2D, width_px: Optional[int] = None) -> float:
    """
    Average u of the detected keypoints; occluded joints are excluded.

    With ``width_px`` given, a pose whose keypoints straddle the seam (spread
    wider than half the image) is averaged on the circle instead.
    """
    u = pose.uv[pose.visible, 0]
    if len(u) == 0:
        raise InputError("mean_image_x needs at least one detected keypoint")
    if width_px is None or np.ptp(u) <= width_px / 2.0:
        return float(np.sum(u) / len(u))

    angles = u * (TWO_PI / width_px)
    mean_angle = math.atan2(float(np.mean(np.sin(angles))), float(np.mean(np.cos(angles))))
    return float(np.mod(mean_angle * width_px / TWO_PI, width_px))


def _circular(a: float, b: float, period: float) -> float:
    d = abs(a - b) % period
    return min(d, period - d)


class _CircularTree:
    """Sorted (value, index) entries with nearest-neighbour lookup on a circle."""

    def __init__(self, entries: Sequence[Tuple[float, int]], period: float):
        self._items = sorted(entries)
        self._period = period

    def __len__(self) -> int:
        return len(self._items)

    def remove(self, value: float, index: int) -> None:
        pos = bisect.bisect_left(self._items, (value, index))
        del self._items[pos]

    def _first_with_value(self, pos: int) -> int:
        return bisect.bisect_left(self._items, (self._items[pos][0], -1))

    def nearest(self, query: float) -> Optional[Tuple[float, int, float]]:
        """(distance, index, value) of the closest entry; equal distances go to the lower index."""
        if not self._items:
            return None
        n = len(self._items)
        pos = bisect.bisect_left(self._items, (query, -1))
        best = None
        for slot in {pos % n, self._first_with_value((pos - 1) % n)}:
            value, index = self._items[slot]
            key = (_circular(query, value, self._period), index, value)
            if best is None or key < best:
                best = key
        return best


def _greedy_match(
    queries: Sequence[Tuple[int, float]],
    targets: Sequence[Tuple[int, float]],
    threshold: float,
    period: float,
) -> Assignment:
    """
    Globally nearest-first one-to-one matching on a circle.

    Every query keeps its current nearest unclaimed target in a heap keyed by
    (distance, target index, query rank). Popping a query whose target was
    claimed meanwhile re-queries the tree; distances only grow, so the first
    pop above ``threshold`` ends the matching.
    """
    if threshold <= 0:
        raise InputError(f"matching threshold must be positive, got {threshold}")

    tree = _CircularTree([(value, index) for index, value in targets], period)
    ordered = sorted(queries, key=lambda q: (q[1], q[0]))

    heap: List[Tuple[float, int, int, int, float]] = []
    for rank, (query_index, value) in enumerate(ordered):
        hit = tree.nearest(value)
        if hit is not None:
            heap.append((hit[0], hit[1], rank, query_index, hit[2]))
    heapq.heapify(heap)

    claimed = set()
    pairs: List[MatchedPair] = []
    while heap:
        distance, target_index, rank, query_index, target_value = heapq.heappop(heap)
        if distance > threshold:
            break
        if target_index in claimed:
            hit = tree.nearest(ordered[rank][1])
            if hit is not None:
                heapq.heappush(heap, (hit[0], hit[1], rank, query_index, hit[2]))
            continue
        claimed.add(target_index)
        tree.remove(target_value, target_index)
        pairs.append(MatchedPair(query_index, target_index, distance))

    matched_queries = {p.pose_index for p in pairs}
    return Assignment(
        pairs=tuple(sorted(pairs, key=lambda p: p.pose_index)),
        unmatched_poses=tuple(sorted(i for i, _ in queries if i not in matched_queries)),
        unmatched_detections=tuple(sorted(i for i, _ in targets if i not in claimed)),
    )


def match_people(
    cands: Sequence[CameraCandidate],
    radars: Sequence[RadarCandidate],
    threshold: float,
    width_px: int,
) -> Assignment:
    """Match by circular pixel distance between mean_x and projected radar x."""
    return _greedy_match(
        [(c.pose_index, c.mean_x) for c in cands],
        [(r.detection_index, r.projected_x) for r in radars],
        threshold,
        float(width_px),
    )


def match_people_angle_baseline(
    cands: Sequence[CameraCandidate],
    radars: Sequence[RadarCandidate],
    cam: CameraModel,
    threshold_rad: float,
) -> Assignment:
    """
    Earlier method: compare the azimuth of the camera mean_x with the azimuth
    of the radar position itself, without a learned image transform.
    """
    horizon = cam.height_px / 2.0
    queries = [(c.pose_index, equirect_unproject(c.mean_x, horizon, cam)[0]) for c in cands]
    targets = [(r.detection_index, azimuth_of(r.world_xz)) for r in radars]
    return _greedy_match(queries, targets, threshold_rad, TWO_PI)


def matching_error_pct(radar_value: float, camera_value: float) -> float:
    """Absolute radar-camera difference as a percentage of the camera value."""
    if camera_value == 0:
        raise DomainError("matching error is undefined for a zero camera value")
    return 100.0 * abs(radar_value - camera_value) / abs(camera_value)


@dataclass
class MatchingErrorSummary:
    radar_id: int
    errors_pct: List[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors_pct)) if self.errors_pct else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.errors_pct)) if self.errors_pct else float("nan")

    def to_dict(self) -> Dict[str, object]:
        return {
            "radar_id": self.radar_id,
            "count": len(self.errors_pct),
            "mean_pct": self.mean,
            "std_pct": self.std,
        }
