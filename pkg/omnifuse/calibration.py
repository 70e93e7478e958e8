"""
Radar calibration.

Two fits live here:

* a per-radar 2D affine correction ``A @ raw + t`` estimated with
  Levenberg-Marquardt from averaged grid recordings (50 cm grid protocol);
* the learned radar -> image-x map, affine in world azimuth, estimated by a
  pseudo-inverse least-squares fit.

Both objectives are linear least squares, so the closed-form normal-equation
solution is available as an oracle (``fit_affine_closed_form``).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.spatial

from omnifuse.errors import ConvergenceError, DegenerateFitError, DomainError, InputError
from omnifuse.geometry import TWO_PI, CameraModel

logger = logging.getLogger(__name__)

GRID_SPACING_M = 0.5
MAX_DAMPING = 1e16
AFFINE_MODELS = ("full", "per_axis")


@dataclass(frozen=True)
class RadarDetection:
    """One raw planar detection in meters; carries no identity."""

    x: float
    z: float

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x, self.z)


@dataclass(frozen=True)
class GridRecording:
    radar_id: int
    true_position: Tuple[float, float]
    readings: np.ndarray


@dataclass(frozen=True)
class GridSample:
    raw: Tuple[float, float]
    true: Tuple[float, float]


def average_grid_readings(rec: GridRecording) -> GridSample:
    """Component-wise mean of the readings taken while a person stood at one grid point."""
    readings = np.asarray(rec.readings, dtype=float).reshape(-1, 2)
    if len(readings) == 0:
        raise InputError(
            f"grid recording for radar {rec.radar_id} at {rec.true_position} has no readings"
        )
    mean = readings.mean(axis=0)
    return GridSample(
        raw=(float(mean[0]), float(mean[1])),
        true=(float(rec.true_position[0]), float(rec.true_position[1])),
    )


# Affine calibration


@dataclass(frozen=True)
class LMOptions:
    initial_damping: float = 1e-3
    damping_increase: float = 10.0
    damping_decrease: float = 10.0
    gtol: float = 1e-10
    xtol: float = 1e-12
    max_iters: int = 200
    model: str = "full"

    def __post_init__(self):
        if self.model not in AFFINE_MODELS:
            raise InputError(f"unknown affine model {self.model!r}; expected one of {AFFINE_MODELS}")
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")


@dataclass(frozen=True)
class AffineCalibration:
    radar_id: int
    matrix: np.ndarray
    translation: np.ndarray
    fit_rms_m: float = 0.0
    sample_count: int = 0
    iterations: int = 0
    model: str = "full"
    cost_history: Tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float).reshape(2, 2)
        translation = np.asarray(self.translation, dtype=float).reshape(2)
        if abs(np.linalg.det(matrix)) <= 1e-9:
            raise InputError(f"calibration matrix for radar {self.radar_id} is singular")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls, radar_id: int) -> "AffineCalibration":
        return cls(radar_id=radar_id, matrix=np.eye(2), translation=np.zeros(2))

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrix, np.eye(2)) and not np.any(self.translation))

    @property
    def parameters(self) -> np.ndarray:
        """Row-major matrix followed by translation."""
        return np.concatenate([self.matrix.ravel(), self.translation])

    def inverse(self) -> "AffineCalibration":
        inv = np.linalg.inv(self.matrix)
        return AffineCalibration(
            radar_id=self.radar_id, matrix=inv, translation=-inv @ self.translation
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "radar_id": self.radar_id,
            "matrix": [float(v) for v in self.matrix.ravel()],
            "translation": [float(v) for v in self.translation],
            "fit_rms_m": float(self.fit_rms_m),
            "sample_count": int(self.sample_count),
            "iterations": int(self.iterations),
            "model": self.model,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AffineCalibration":
        return cls(
            radar_id=int(data["radar_id"]),
            matrix=np.asarray(data["matrix"], dtype=float).reshape(2, 2),
            translation=np.asarray(data["translation"], dtype=float),
            fit_rms_m=float(data.get("fit_rms_m", 0.0)),
            sample_count=int(data.get("sample_count", 0)),
            iterations=int(data.get("iterations", 0)),
            model=data.get("model", "full"),
        )


def apply_affine_many(cal: AffineCalibration, raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=float).reshape(-1, 2)
    return raw @ cal.matrix.T + cal.translation


def apply_affine(cal: AffineCalibration, raw: Sequence[float]) -> Tuple[float, float]:
    x, z = apply_affine_many(cal, np.asarray(raw, dtype=float))[0]
    return float(x), float(z)


def _sample_arrays(samples: Sequence[GridSample]) -> Tuple[np.ndarray, np.ndarray]:
    raw = np.array([s.raw for s in samples], dtype=float).reshape(-1, 2)
    true = np.array([s.true for s in samples], dtype=float).reshape(-1, 2)
    return raw, true


def _design(raw: np.ndarray, model: str) -> np.ndarray:
    """
    Jacobian of the stacked residuals (x0, z0, x1, z1, ...) w.r.t. the parameters.

    The residual is linear in the parameters, so this is also the design matrix.
    Parameters are [a11, a12, a21, a22, tx, tz] for the full model and
    [a11, a22, tx, tz] for the per-axis model.
    """
    n = len(raw)
    x, z = raw[:, 0], raw[:, 1]
    zeros, ones = np.zeros(n), np.ones(n)
    if model == "full":
        rows_x = np.stack([x, z, zeros, zeros, ones, zeros], axis=1)
        rows_z = np.stack([zeros, zeros, x, z, zeros, ones], axis=1)
    else:
        rows_x = np.stack([x, zeros, ones, zeros], axis=1)
        rows_z = np.stack([zeros, z, zeros, ones], axis=1)
    jac = np.empty((2 * n, rows_x.shape[1]))
    jac[0::2] = rows_x
    jac[1::2] = rows_z
    return jac


def _unpack(theta: np.ndarray, model: str) -> Tuple[np.ndarray, np.ndarray]:
    if model == "full":
        return theta[:4].reshape(2, 2), theta[4:]
    return np.diag(theta[:2]), theta[2:]


def _identity_parameters(model: str) -> np.ndarray:
    if model == "full":
        return np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    return np.array([1.0, 1.0, 0.0, 0.0])


def _check_samples(raw: np.ndarray, jac: np.ndarray) -> None:
    if len(raw) < 3:
        raise DegenerateFitError(f"affine fit needs >= 3 samples, got {len(raw)}")
    homogeneous = np.column_stack([raw, np.ones(len(raw))])
    if np.linalg.matrix_rank(homogeneous) < 3 or np.linalg.matrix_rank(jac) < jac.shape[1]:
        raise DegenerateFitError("grid samples are collinear; affine fit is underdetermined")


def fit_affine_closed_form(
    samples: Sequence[GridSample], radar_id: int = 0, model: str = "full"
) -> AffineCalibration:
    """Linear least-squares solution of the affine fit (normal-equation oracle)."""
    raw, true = _sample_arrays(samples)
    jac = _design(raw, model)
    _check_samples(raw, jac)
    target = true.ravel()

    theta, *_ = scipy.linalg.lstsq(jac, target)
    residual = jac @ theta - target
    matrix, translation = _unpack(theta, model)
    return AffineCalibration(
        radar_id=radar_id,
        matrix=matrix,
        translation=translation,
        fit_rms_m=math.sqrt(float(residual @ residual) / len(raw)),
        sample_count=len(raw),
        model=model,
    )


def fit_affine_lm(
    samples: Sequence[GridSample], opts: LMOptions = LMOptions(), radar_id: int = 0
) -> AffineCalibration:
    """
    Fit ``true ~ A @ raw + t`` with Levenberg-Marquardt, starting at identity.

    Uses Marquardt's diagonal scaling of the damping term. Every accepted
    step strictly lowers the sum of squared residuals; the sequence of
    accepted costs is kept in ``cost_history``.

    Raises
    ------
    DegenerateFitError
        Fewer than 3 samples, or collinear samples.
    ConvergenceError
        No convergence within ``opts.max_iters``; ``.best`` holds the
        best-so-far calibration.
    """
    raw, true = _sample_arrays(samples)
    jac = _design(raw, opts.model)
    _check_samples(raw, jac)
    target = true.ravel()
    n = len(raw)

    theta = _identity_parameters(opts.model)
    residual = jac @ theta - target
    cost = float(residual @ residual)
    history = [cost]
    hessian = jac.T @ jac
    damping = opts.initial_damping

    def build(params: np.ndarray, iterations: int) -> AffineCalibration:
        matrix, translation = _unpack(params, opts.model)
        return AffineCalibration(
            radar_id=radar_id,
            matrix=matrix,
            translation=translation,
            fit_rms_m=math.sqrt(history[-1] / n),
            sample_count=n,
            iterations=iterations,
            model=opts.model,
            cost_history=tuple(history),
        )

    for iteration in range(1, opts.max_iters + 1):
        gradient = jac.T @ residual
        if np.max(np.abs(gradient)) < opts.gtol:
            logger.debug("radar %d: LM converged on gradient after %d steps", radar_id, iteration - 1)
            return build(theta, iteration - 1)

        damped = hessian + damping * np.diag(np.diag(hessian))
        step = -scipy.linalg.solve(damped, gradient, assume_a="pos")
        candidate = theta + step
        candidate_residual = jac @ candidate - target
        candidate_cost = float(candidate_residual @ candidate_residual)

        if candidate_cost < cost:
            theta, residual, cost = candidate, candidate_residual, candidate_cost
            history.append(cost)
            damping /= opts.damping_decrease
        else:
            damping = min(damping * opts.damping_increase, MAX_DAMPING)
        logger.debug(
            "radar %d: LM iter %d cost=%.6e damping=%.1e", radar_id, iteration, cost, damping
        )

        if np.linalg.norm(step) < opts.xtol * (np.linalg.norm(theta) + opts.xtol):
            logger.debug("radar %d: LM converged on step size after %d steps", radar_id, iteration)
            return build(theta, iteration)

    raise ConvergenceError(
        f"LM did not converge for radar {radar_id} within {opts.max_iters} iterations",
        best=build(theta, opts.max_iters),
    )


def calibration_mae(
    cal: AffineCalibration, samples: Iterable[GridSample]
) -> Tuple[float, float]:
    """Mean absolute (x, z) error in meters of the calibrated raw samples."""
    raw, true = _sample_arrays(list(samples))
    err = np.abs(apply_affine_many(cal, raw) - true)
    return float(err[:, 0].mean()), float(err[:, 1].mean())


# Radar -> image map


@dataclass(frozen=True)
class RadarImageMap:
    """
    ``u = slope_px_per_rad * azimuth + offset_px`` wrapped into [0, width_px),
    where azimuth = atan2(x, z) of a corrected radar position.
    """

    slope_px_per_rad: float
    offset_px: float
    width_px: int
    residual_rms_px: float = 0.0
    sample_count: int = 0

    @classmethod
    def from_camera(cls, cam: CameraModel) -> "RadarImageMap":
        slope = cam.width_px / TWO_PI
        return cls(
            slope_px_per_rad=slope,
            offset_px=cam.width_px / 2.0 - slope * cam.yaw_offset_rad,
            width_px=cam.width_px,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slope_px_per_rad": self.slope_px_per_rad,
            "offset_px": self.offset_px,
            "width_px": self.width_px,
            "residual_rms_px": self.residual_rms_px,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RadarImageMap":
        return cls(
            slope_px_per_rad=float(data["slope_px_per_rad"]),
            offset_px=float(data["offset_px"]),
            width_px=int(data["width_px"]),
            residual_rms_px=float(data.get("residual_rms_px", 0.0)),
            sample_count=int(data.get("sample_count", 0)),
        )


def _azimuths(xz: np.ndarray) -> np.ndarray:
    xz = np.asarray(xz, dtype=float).reshape(-1, 2)
    if np.any(np.hypot(xz[:, 0], xz[:, 1]) < 1e-12):
        raise DomainError("radar position at the origin has no azimuth")
    return np.arctan2(xz[:, 0], xz[:, 1])


def fit_radar_to_image(
    samples: Sequence[Tuple[Sequence[float], float]], cam: CameraModel
) -> RadarImageMap:
    """
    Least-squares (pseudo-inverse) fit of image u against world azimuth.

    Observed u values are first unwrapped onto the line predicted by the
    analytic camera map so samples on both sides of the seam agree.
    """
    if len(samples) < 3:
        raise DegenerateFitError(f"radar->image fit needs >= 3 samples, got {len(samples)}")
    xz = np.array([s[0] for s in samples], dtype=float)
    observed = np.array([s[1] for s in samples], dtype=float)
    azimuth = _azimuths(xz)

    analytic = RadarImageMap.from_camera(cam)
    predicted = analytic.slope_px_per_rad * azimuth + analytic.offset_px
    unwrapped = observed + cam.width_px * np.round((predicted - observed) / cam.width_px)

    design = np.column_stack([azimuth, np.ones_like(azimuth)])
    if np.linalg.matrix_rank(design) < 2:
        raise DegenerateFitError("radar->image samples do not span distinct azimuths")
    slope, offset = scipy.linalg.pinv(design) @ unwrapped
    residual = design @ np.array([slope, offset]) - unwrapped

    return RadarImageMap(
        slope_px_per_rad=float(slope),
        offset_px=float(offset),
        width_px=cam.width_px,
        residual_rms_px=float(np.sqrt(np.mean(residual**2))),
        sample_count=len(samples),
    )


def radar_to_image_many(image_map: RadarImageMap, xz: np.ndarray) -> np.ndarray:
    u = image_map.slope_px_per_rad * _azimuths(xz) + image_map.offset_px
    u = np.mod(u, image_map.width_px)
    return np.where(u >= image_map.width_px, 0.0, u)


def radar_to_image_x(image_map: RadarImageMap, xz: Sequence[float]) -> float:
    return float(radar_to_image_many(image_map, np.asarray(xz, dtype=float))[0])


def group_grid_readings(
    rows: Iterable[Tuple[int, float, float, float, float]],
    spacing: float = GRID_SPACING_M,
    tolerance: float = 1e-3,
) -> Dict[int, List[GridRecording]]:
    """
    Group (radar_id, true_x, true_z, raw_x, raw_z) rows into one recording per grid point.

    Each radar's grid points must form a lattice with ``spacing`` steps: every
    point's nearest neighbour lies ``spacing`` away, within ``tolerance``.

    Raises
    ------
    InputError
        A radar's grid points are off the lattice.
    """
    buckets: Dict[Tuple[int, float, float], List[Tuple[float, float]]] = {}
    for radar_id, true_x, true_z, raw_x, raw_z in rows:
        buckets.setdefault((radar_id, true_x, true_z), []).append((raw_x, raw_z))

    grouped: Dict[int, List[GridRecording]] = {}
    for (radar_id, true_x, true_z), readings in sorted(buckets.items()):
        grouped.setdefault(radar_id, []).append(
            GridRecording(
                radar_id=radar_id,
                true_position=(true_x, true_z),
                readings=np.array(readings, dtype=float),
            )
        )
    for radar_id, recordings in grouped.items():
        _check_lattice(radar_id, recordings, spacing, tolerance)
    return grouped


def _check_lattice(
    radar_id: int, recordings: Sequence[GridRecording], spacing: float, tolerance: float
) -> None:
    if len(recordings) < 2:
        return
    points = np.array([r.true_position for r in recordings], dtype=float)
    distances, _ = scipy.spatial.cKDTree(points).query(points, k=2)
    nearest = distances[:, 1]
    off = np.flatnonzero(np.abs(nearest - spacing) > tolerance)
    if len(off):
        point = tuple(float(v) for v in points[off[0]])
        raise InputError(
            f"radar {radar_id}: grid point {point} has its nearest neighbour "
            f"{nearest[off[0]]:.3f} m away, expected a {spacing} m lattice"
        )
