"""
Evaluation metrics: the MPJPE family, localization MAE, matching accuracy and
localization error heatmaps.

Pose inputs are meters; ``PoseErrorReport`` converts to millimeters at the
reporting boundary. ``pa_mpjpe`` aligns pred onto gt (asymmetric Procrustes),
so it is not symmetric in its arguments.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from omnifuse.errors import AlignmentError, InputError
from omnifuse.matching import Assignment
from omnifuse.skeleton import N_JOINTS, OcclusionScenario

logger = logging.getLogger(__name__)

MM_PER_M = 1000.0
CM_PER_M = 100.0
_RANK_TOL = 1e-9


def _pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise InputError(f"pose shapes differ or are not (n, 3): {pred.shape} vs {gt.shape}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise InputError("poses must be finite")
    return pred, gt


def per_joint_errors(pred, gt) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=1)


def mpjpe(pred, gt) -> float:
    """Mean per-joint Euclidean distance, in the input units."""
    return float(np.mean(per_joint_errors(pred, gt)))


def scale_align(pred, gt) -> np.ndarray:
    """Center both poses and apply the least-squares optimal scale to pred."""
    pred, gt = _pair(pred, gt)
    pred_c = pred - pred.mean(axis=0)
    gt_c = gt - gt.mean(axis=0)
    norm = float(np.sum(pred_c * pred_c))
    if norm == 0.0:
        raise InputError("cannot scale-align a degenerate (all-coincident) prediction")
    scale = float(np.sum(pred_c * gt_c)) / norm
    return scale * pred_c + gt.mean(axis=0)


def n_mpjpe(pred, gt) -> float:
    return mpjpe(scale_align(pred, gt), gt)


def procrustes_align(pred, gt, with_scale: bool = True) -> np.ndarray:
    """
    Similarity transform of pred onto gt by orthogonal Procrustes.

    The rotation is restricted to proper rotations (det = +1).
    """
    pred, gt = _pair(pred, gt)
    mu_pred, mu_gt = pred.mean(axis=0), gt.mean(axis=0)
    x = pred - mu_pred
    y = gt - mu_gt
    if np.linalg.matrix_rank(x, tol=_RANK_TOL) < 2 or np.linalg.matrix_rank(y, tol=_RANK_TOL) < 2:
        raise AlignmentError("Procrustes alignment needs point sets of rank >= 2")

    u, s, vt = np.linalg.svd(x.T @ y)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    correction = np.diag([1.0, 1.0, d])
    rotation = vt.T @ correction @ u.T
    scale = float(np.sum(s * np.diag(correction)) / np.sum(x * x)) if with_scale else 1.0
    return scale * x @ rotation.T + mu_gt


def pa_mpjpe(pred, gt, with_scale: bool = True) -> float:
    return mpjpe(procrustes_align(pred, gt, with_scale=with_scale), gt)


class Axis(str, Enum):
    X = "x"
    Z = "z"


def localization_mae(
    samples: Sequence[Tuple[Sequence[float], Sequence[float]]], axis: Union[Axis, str]
) -> float:
    """Mean absolute (pred - true) error along one planar axis, in centimeters."""
    if len(samples) == 0:
        raise InputError("localization_mae needs at least one sample")
    column = 0 if Axis(axis) is Axis.X else 1
    pred = np.array([s[0] for s in samples], dtype=float).reshape(-1, 2)
    true = np.array([s[1] for s in samples], dtype=float).reshape(-1, 2)
    return float(np.mean(np.abs(pred[:, column] - true[:, column])) * CM_PER_M)


def matching_accuracy(
    assignment: Assignment, truth: Union[Mapping[int, int], Iterable[Tuple[int, int]]]
) -> float:
    """
    Percentage of true (pose_index, detection_index) pairs the assignment got right.

    A frame with no true pairs scores 100.
    """
    true_pairs = set(truth.items()) if isinstance(truth, Mapping) else set(truth)
    if not true_pairs:
        return 100.0
    correct = len(true_pairs & assignment.pair_set())
    return 100.0 * correct / len(true_pairs)


@dataclass
class PoseErrorReport:
    """Per-scenario pose errors in millimeters, averaged over poses."""

    scenario: OcclusionScenario = OcclusionScenario.NONE
    mpjpe_mm: float = float("nan")
    n_mpjpe_mm: float = float("nan")
    pa_mpjpe_mm: float = float("nan")
    per_joint_mm: List[float] = field(default_factory=lambda: [float("nan")] * N_JOINTS)
    count: int = 0

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[Tuple[np.ndarray, np.ndarray]],
        scenario: OcclusionScenario = OcclusionScenario.NONE,
        with_scale: bool = True,
    ) -> "PoseErrorReport":
        """Aggregate (pred, gt) pose pairs given in meters."""
        joints, mp, nmp, pamp = [], [], [], []
        for pred, gt in pairs:
            joints.append(per_joint_errors(pred, gt))
            mp.append(mpjpe(pred, gt))
            nmp.append(n_mpjpe(pred, gt))
            pamp.append(pa_mpjpe(pred, gt, with_scale=with_scale))
        if not mp:
            return cls(scenario=OcclusionScenario(scenario))
        return cls(
            scenario=OcclusionScenario(scenario),
            mpjpe_mm=float(np.mean(mp)) * MM_PER_M,
            n_mpjpe_mm=float(np.mean(nmp)) * MM_PER_M,
            pa_mpjpe_mm=float(np.mean(pamp)) * MM_PER_M,
            per_joint_mm=[float(v) * MM_PER_M for v in np.mean(joints, axis=0)],
            count=len(mp),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario.value,
            "label": self.scenario.label,
            "count": self.count,
            "mpjpe_mm": _finite_or_none(self.mpjpe_mm),
            "n_mpjpe_mm": _finite_or_none(self.n_mpjpe_mm),
            "pa_mpjpe_mm": _finite_or_none(self.pa_mpjpe_mm),
            "per_joint_mm": [_finite_or_none(v) for v in self.per_joint_mm],
        }


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


# Heatmaps


@dataclass(frozen=True)
class HeatmapGrid:
    """
    Regular planar grid of localization errors.

    ``cells[i, j]`` covers x in [origin_x + i*cell, +cell) and z in
    [origin_z + j*cell, +cell) and holds (mae_x_m, mae_z_m, n). Empty cells
    carry NaN errors and n = 0.
    """

    cell_size: float
    origin: Tuple[float, float]
    cells: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.cells.shape[0], self.cells.shape[1]

    def counts(self) -> np.ndarray:
        return self.cells[..., 2].astype(int)

    def cell_index(self, xz: Sequence[float]) -> Optional[Tuple[int, int]]:
        i = int(math.floor((xz[0] - self.origin[0]) / self.cell_size))
        j = int(math.floor((xz[1] - self.origin[1]) / self.cell_size))
        nx, nz = self.shape
        if 0 <= i < nx and 0 <= j < nz:
            return i, j
        return None

    def cell_center(self, i: int, j: int) -> Tuple[float, float]:
        return (
            self.origin[0] + (i + 0.5) * self.cell_size,
            self.origin[1] + (j + 0.5) * self.cell_size,
        )

    def rows(self) -> List[Tuple[float, float, float, float, int]]:
        """One (cell_x, cell_z, mae_x_m, mae_z_m, n) row per cell, x-major."""
        out = []
        nx, nz = self.shape
        for i in range(nx):
            for j in range(nz):
                cx, cz = self.cell_center(i, j)
                mae_x, mae_z, n = self.cells[i, j]
                out.append((cx, cz, float(mae_x), float(mae_z), int(n)))
        return out


def build_heatmap(
    samples: Iterable[Tuple[Sequence[float], Sequence[float]]],
    cell_size: float,
    bounds: Tuple[float, float, float, float],
) -> HeatmapGrid:
    """
    Bin (true_xz, pred_xz) samples by true position.

    ``bounds`` is (x_min, x_max, z_min, z_max); samples outside are ignored.
    """
    if cell_size <= 0:
        raise InputError("cell_size must be positive")
    x_min, x_max, z_min, z_max = bounds
    if x_max <= x_min or z_max <= z_min:
        raise InputError(f"empty heatmap bounds {bounds}")
    nx = int(math.ceil((x_max - x_min) / cell_size))
    nz = int(math.ceil((z_max - z_min) / cell_size))

    sums = np.zeros((nx, nz, 2))
    counts = np.zeros((nx, nz), dtype=int)
    grid = HeatmapGrid(cell_size=cell_size, origin=(x_min, z_min), cells=np.zeros((nx, nz, 3)))
    skipped = 0
    for true_xz, pred_xz in samples:
        idx = grid.cell_index(true_xz)
        if idx is None:
            skipped += 1
            continue
        sums[idx] += np.abs(np.asarray(pred_xz, dtype=float) - np.asarray(true_xz, dtype=float))
        counts[idx] += 1
    if skipped:
        logger.debug("heatmap: %d samples outside bounds", skipped)

    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts[..., None] > 0, sums / counts[..., None], np.nan)
    cells = np.concatenate([means, counts[..., None].astype(float)], axis=-1)
    return HeatmapGrid(cell_size=cell_size, origin=(x_min, z_min), cells=cells)
