"""
Equirectangular camera model, pose normalization, perspective lifting
and placement of lifted poses in the world frame.

Conventions
-----------
World frame: origin on the ground directly below the camera, x east, y up,
z north (azimuth 0). Azimuth is ``atan2(x, z)``; elevation is measured from
the camera center.

Image: u grows with azimuth (eastward) and wraps at azimuth +-pi; v grows
downward from the zenith. Each pose is normalized and lifted in its own
pinhole view aimed at the pelvis (y down); ``place_global`` turns the view
axes back into the world frame.

Every function here is pure and thread-safe.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from omnifuse.errors import DomainError, InputError, NormalizationError
from omnifuse.skeleton import ANKLES, N_JOINTS, ROOT

DEFAULT_C = 10.0
TWO_PI = 2.0 * math.pi
_ORIGIN_EPS = 1e-12
_MIN_FORWARD = 1e-6


def wrap_angle(angle):
    """Wrap radians into [-pi, pi). Works on scalars and arrays."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + math.pi, TWO_PI) - math.pi
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def circular_difference(a, b, period: float):
    """Signed difference a - b wrapped into [-period/2, period/2)."""
    half = period / 2.0
    return np.mod(np.asarray(a, dtype=float) - b + half, period) - half


@dataclass(frozen=True)
class CameraModel:
    width_px: int = 1920
    height_px: int = 960
    yaw_offset_rad: float = 0.0
    height_m: float = 1.0

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise InputError("camera dimensions must be positive")
        if self.width_px != 2 * self.height_px:
            raise InputError(
                f"equirectangular frames need width = 2 x height, got {self.width_px}x{self.height_px}"
            )
        if not -math.pi <= self.yaw_offset_rad < math.pi:
            raise InputError("yaw_offset_rad must lie in [-pi, pi)")

    @property
    def radians_per_px(self) -> float:
        return TWO_PI / self.width_px

    @property
    def center(self) -> np.ndarray:
        return np.array([0.0, self.height_m, 0.0])


def project_points(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Vectorized equirect_project: (n, 3) world points -> (n, 2) pixels."""
    rel = np.asarray(points, dtype=float).reshape(-1, 3) - cam.center
    if np.any(np.linalg.norm(rel, axis=1) < _ORIGIN_EPS):
        raise DomainError("cannot project a point at the camera center")

    planar = np.hypot(rel[:, 0], rel[:, 2])
    azimuth = np.arctan2(rel[:, 0], rel[:, 2])
    elevation = np.arctan2(rel[:, 1], planar)

    u = cam.width_px * (wrap_angle(azimuth - cam.yaw_offset_rad) + math.pi) / TWO_PI
    u = np.where(u >= cam.width_px, u - cam.width_px, u)
    v = cam.height_px * (math.pi / 2.0 - elevation) / math.pi
    return np.stack([u, v], axis=1)


def equirect_project(point: Sequence[float], cam: CameraModel) -> Tuple[float, float]:
    u, v = project_points(np.asarray(point, dtype=float)[None, :], cam)[0]
    return float(u), float(v)


def unproject_pixels(uv: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Vectorized equirect_unproject: (n, 2) pixels -> (n, 2) (azimuth, elevation)."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    u, v = uv[:, 0], uv[:, 1]
    if np.any((u < 0) | (u >= cam.width_px) | (v < 0) | (v > cam.height_px)):
        raise DomainError("pixel outside the equirectangular frame")

    azimuth = wrap_angle(TWO_PI * u / cam.width_px - math.pi + cam.yaw_offset_rad)
    elevation = math.pi / 2.0 - math.pi * v / cam.height_px
    return np.stack([np.atleast_1d(azimuth), elevation], axis=1)


def equirect_unproject(u: float, v: float, cam: CameraModel) -> Tuple[float, float]:
    azimuth, elevation = unproject_pixels(np.array([[u, v]]), cam)[0]
    return float(azimuth), float(elevation)


def direction_from_angles(azimuth, elevation) -> np.ndarray:
    """Unit viewing direction(s) for the given azimuth/elevation."""
    azimuth = np.asarray(azimuth, dtype=float)
    elevation = np.asarray(elevation, dtype=float)
    return np.stack(
        [
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
            np.cos(elevation) * np.cos(azimuth),
        ],
        axis=-1,
    )


def azimuth_of(xz: Sequence[float]) -> float:
    x, z = float(xz[0]), float(xz[1])
    if math.hypot(x, z) < _ORIGIN_EPS:
        raise DomainError("azimuth undefined at the origin")
    return math.atan2(x, z)


# Poses


@dataclass(frozen=True)
class Pose2D:
    """15 detector keypoints as rows of (u, v, confidence)."""

    keypoints: np.ndarray
    person_hint: Optional[object] = None

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=float)
        if kp.shape != (N_JOINTS, 3):
            raise InputError(f"Pose2D needs {N_JOINTS}x3 keypoints, got {kp.shape}")
        if not np.all(np.isfinite(kp)):
            raise InputError("Pose2D keypoints must be finite")
        conf = kp[:, 2]
        if np.any((conf < 0) | (conf > 1)):
            raise InputError("keypoint confidence must lie in [0, 1]")
        if not np.any(conf > 0):
            raise InputError("Pose2D needs at least one detected keypoint")
        object.__setattr__(self, "keypoints", kp)

    @property
    def uv(self) -> np.ndarray:
        return self.keypoints[:, :2]

    @property
    def confidence(self) -> np.ndarray:
        return self.keypoints[:, 2]

    @property
    def visible(self) -> np.ndarray:
        return self.keypoints[:, 2] > 0


@dataclass(frozen=True)
class NormRecord:
    root_px: Tuple[float, float]
    scale_px_per_unit: float
    width_px: Optional[int] = None


@dataclass(frozen=True)
class NormalizedPose2D:
    keypoints: np.ndarray
    occlusion_mask: np.ndarray
    norm_record: NormRecord
    person_hint: Optional[object] = None

    def to_pixels(self) -> np.ndarray:
        """Invert the normalization back to (15, 2) pixel coordinates."""
        rec = self.norm_record
        uv = self.keypoints * rec.scale_px_per_unit + np.asarray(rec.root_px)
        if rec.width_px is not None:
            uv[:, 0] = np.mod(uv[:, 0], rec.width_px)
        return uv


def normalize_pose(pose: Pose2D, width_px: Optional[int] = None) -> NormalizedPose2D:
    """
    Root the pose at the pelvis and scale it to unit max radius.

    The radius is taken over unoccluded keypoints only. When ``width_px`` is
    given, horizontal offsets are measured the short way round the seam.
    """
    visible = pose.visible
    if not visible[ROOT]:
        raise NormalizationError("pelvis keypoint is occluded")
    if np.count_nonzero(visible) < 2:
        raise NormalizationError("need at least 2 detected keypoints to normalize")

    root = pose.uv[ROOT]
    offsets = pose.uv - root
    if width_px is not None:
        offsets[:, 0] = circular_difference(pose.uv[:, 0], root[0], width_px)

    radius = float(np.max(np.linalg.norm(offsets[visible], axis=1)))
    if radius <= 0.0:
        raise NormalizationError("detected keypoints all coincide with the pelvis")

    return NormalizedPose2D(
        keypoints=offsets / radius,
        occlusion_mask=~visible,
        norm_record=NormRecord(
            root_px=(float(root[0]), float(root[1])),
            scale_px_per_unit=radius,
            width_px=width_px,
        ),
        person_hint=pose.person_hint,
    )


def normalize_arrays(
    uv: np.ndarray, visible: np.ndarray, width_px: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Batched normalize_pose over P poses.

    Returns (normalized (P, 15, 2), radius_px (P,), ok (P,)). Rows with
    ``ok`` False would raise NormalizationError in normalize_pose; their
    values are meaningless.
    """
    root = uv[:, ROOT, :]
    offsets = uv - root[:, None, :]
    if width_px is not None:
        offsets[..., 0] = circular_difference(uv[..., 0], root[:, None, 0], width_px)

    dist = np.where(visible, np.linalg.norm(offsets, axis=-1), 0.0)
    radius = np.max(dist, axis=1) if len(uv) else np.zeros(0)
    ok = visible[:, ROOT] & (np.count_nonzero(visible, axis=1) >= 2) & (radius > 0.0)
    safe = np.where(ok, radius, 1.0)
    return offsets / safe[:, None, None], radius, ok


# Per-person pinhole views


@dataclass(frozen=True)
class PerspectiveView:
    """
    Pinhole view at the camera center, aimed along one person's pelvis ray.

    The view's x axis is horizontal (to the right), y points down and z
    looks forward. ``focal_px`` converts tangent-plane coordinates to view
    pixels.
    """

    azimuth: float
    elevation: float = 0.0
    focal_px: float = 1.0

    def axes(self) -> np.ndarray:
        """(3, 3) rows: right, down, forward."""
        return view_axes(self.azimuth, self.elevation)[0]


def view_axes(azimuth, elevation) -> np.ndarray:
    """Stacked (right, down, forward) world axes, (P, 3, 3), of views aimed at the angles."""
    azimuth = np.atleast_1d(np.asarray(azimuth, dtype=float))
    elevation = np.atleast_1d(np.asarray(elevation, dtype=float))
    right = np.stack([np.cos(azimuth), np.zeros_like(azimuth), -np.sin(azimuth)], axis=-1)
    forward = direction_from_angles(azimuth, elevation)
    down = np.cross(right, forward)
    return np.stack([right, down, forward], axis=1)


def perspective_arrays(
    uv: np.ndarray, visible: np.ndarray, cam: CameraModel
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Re-project P panorama poses into per-person pinhole views.

    Each view looks along the ray through the pose's pelvis pixel, so the
    pelvis lands on (0, 0) and horizontal offsets never cross the seam.
    Returns (view_uv (P, 15, 2), azimuth (P,), elevation (P,), ok (P,)).
    A row is not ok when its pelvis is occluded or a detected keypoint lies
    outside the panorama or behind the view. Keypoints that cannot be
    projected map to 0.
    """
    uv = np.asarray(uv, dtype=float)
    visible = np.asarray(visible, dtype=bool)
    u, v = uv[..., 0], uv[..., 1]
    inside = (u >= 0) & (u < cam.width_px) & (v >= 0) & (v <= cam.height_px)

    azimuth = TWO_PI * u / cam.width_px - math.pi + cam.yaw_offset_rad
    elevation = math.pi / 2.0 - math.pi * v / cam.height_px
    view_azimuth = np.atleast_1d(wrap_angle(azimuth[:, ROOT]))
    view_elevation = elevation[:, ROOT]

    axes = view_axes(view_azimuth, view_elevation)
    local = np.einsum("pjw,pkw->pjk", direction_from_angles(azimuth, elevation), axes)
    forward = local[..., 2]
    usable = inside & (forward > _MIN_FORWARD)
    ok = visible[:, ROOT] & np.all(~visible | usable, axis=1)

    focal = cam.width_px / TWO_PI
    safe = np.where(usable, forward, 1.0)
    view_uv = np.where(usable[..., None], focal * local[..., :2] / safe[..., None], 0.0)
    return view_uv, view_azimuth, view_elevation, ok


def perspective_pose(pose: Pose2D, cam: CameraModel) -> Tuple[Pose2D, PerspectiveView]:
    """Single-pose perspective_arrays. Raises NormalizationError where a row would not be ok."""
    if not pose.visible[ROOT]:
        raise NormalizationError("pelvis keypoint is occluded")
    view_uv, azimuth, elevation, ok = perspective_arrays(pose.uv[None], pose.visible[None], cam)
    if not ok[0]:
        raise NormalizationError("a detected keypoint falls outside the pelvis view")
    view = PerspectiveView(float(azimuth[0]), float(elevation[0]), cam.width_px / TWO_PI)
    keypoints = np.column_stack([view_uv[0], pose.confidence])
    return Pose2D(keypoints=keypoints, person_hint=pose.person_hint), view


def root_view(joints_world: np.ndarray, cam: CameraModel) -> Tuple[PerspectiveView, float]:
    """The view aimed at a world skeleton's pelvis and the pelvis distance in meters."""
    ray = np.asarray(joints_world, dtype=float)[ROOT] - cam.center
    distance = float(np.linalg.norm(ray))
    if distance < _ORIGIN_EPS:
        raise DomainError("pelvis sits at the camera center")
    view = PerspectiveView(
        azimuth=math.atan2(ray[0], ray[2]),
        elevation=math.atan2(ray[1], math.hypot(ray[0], ray[2])),
        focal_px=cam.width_px / TWO_PI,
    )
    return view, distance


@dataclass(frozen=True)
class LocalPose3D:
    """Lifted pose in lifting units; the root sits at (0, 0, c)."""

    keypoints: np.ndarray
    c: float = DEFAULT_C


@dataclass(frozen=True)
class GlobalPose3D:
    """World-frame pose in meters, lowest ankle on the ground plane."""

    keypoints: np.ndarray
    person_id: Optional[object] = None
    source_radar: Optional[int] = None

    @property
    def root_xz(self) -> Tuple[float, float]:
        root = self.keypoints[ROOT]
        return float(root[0]), float(root[2])


def lift_arrays(xy: np.ndarray, depth_offsets: np.ndarray, c: float) -> np.ndarray:
    """Perspective lifting of stacked poses: (..., 15, 2) and (..., 15) -> (..., 15, 3)."""
    z = np.maximum(1.0, depth_offsets + c)
    return np.concatenate([xy * z[..., None], z[..., None]], axis=-1)


def reconstruct_3d(
    pose: NormalizedPose2D, depth_offsets: Sequence[float], c: float = DEFAULT_C
) -> LocalPose3D:
    """Perspective reconstruction: z_i = max(1, d_i + c), x_i -> (x_i z_i, y_i z_i, z_i)."""
    if not c > 1.0:
        raise InputError(f"lifting constant c must exceed 1, got {c}")
    offsets = np.asarray(depth_offsets, dtype=float)
    if offsets.shape != (N_JOINTS,):
        raise InputError(f"expected {N_JOINTS} depth offsets, got shape {offsets.shape}")
    if not np.all(np.isfinite(offsets)):
        raise InputError("depth offsets must be finite")
    return LocalPose3D(keypoints=lift_arrays(pose.keypoints, offsets, c), c=c)


def place_arrays(
    local: np.ndarray,
    c: float,
    radar_xz: np.ndarray,
    world_scale: np.ndarray,
    axes: np.ndarray,
    image_radius: np.ndarray,
) -> np.ndarray:
    """
    Batched place_global over P poses.

    ``local`` is (P, 15, 3); ``radar_xz`` is (P, 2); ``axes`` is the
    (P, 3, 3) stack of view axes; ``world_scale`` and ``image_radius``
    are (P,).
    """
    radius = np.asarray(image_radius, dtype=float)[:, None]
    components = np.stack(
        [local[..., 0] * radius, local[..., 1] * radius, local[..., 2] - c], axis=-1
    )
    offsets = np.einsum("pjk,pkw->pjw", components, axes)
    offsets *= np.asarray(world_scale, dtype=float)[:, None, None]

    wx = offsets[..., 0] + radar_xz[:, 0:1]
    wy = offsets[..., 1] - np.min(offsets[:, list(ANKLES), 1], axis=1, keepdims=True)
    wz = offsets[..., 2] + radar_xz[:, 1:2]
    return np.stack([wx, wy, wz], axis=-1)


def place_global(
    pose: LocalPose3D,
    radar_xz: Sequence[float],
    world_scale: float,
    *,
    view: Optional[PerspectiveView] = None,
    image_radius: float = 1.0,
    person_id: Optional[object] = None,
    source_radar: Optional[int] = None,
) -> GlobalPose3D:
    """
    Move a lifted pose into the world frame.

    Subtracts c, scales to meters and adds the radar (x, z). The pose is then
    shifted vertically so its lowest ankle touches y = 0.

    ``view`` is the pinhole view the pose was normalized in; its axes turn
    the lifted offsets into world directions. ``image_radius`` is the
    normalization radius in tangent units and restores the lateral
    offsets that normalization divided out. Without a view the lifting
    frame's axes are the world's, y flipped.
    """
    if not world_scale > 0:
        raise InputError("world_scale must be positive")
    if not image_radius > 0:
        raise InputError("image_radius must be positive")
    placed = place_arrays(
        pose.keypoints[None],
        pose.c,
        np.asarray(radar_xz, dtype=float).reshape(1, 2),
        np.array([world_scale]),
        (view or PerspectiveView(0.0)).axes()[None],
        np.array([image_radius]),
    )[0]
    return GlobalPose3D(keypoints=placed, person_id=person_id, source_radar=source_radar)


def world_to_lifting(
    joints_world: np.ndarray,
    c: float,
    world_scale: float,
    view: Optional[PerspectiveView] = None,
    image_radius: float = 1.0,
) -> np.ndarray:
    """
    Express a world skeleton in the lifting frame used by place_global.

    Inverse of place_global up to the ground snap: root at (0, 0, c), y down,
    depth along the view's forward axis, lengths divided by ``world_scale``
    and lateral offsets further divided by ``image_radius``.
    """
    joints = np.asarray(joints_world, dtype=float)
    components = (joints - joints[ROOT]) @ (view or PerspectiveView(0.0)).axes().T
    lateral = world_scale * image_radius
    return np.column_stack(
        [
            components[:, 0] / lateral,
            components[:, 1] / lateral,
            components[:, 2] / world_scale + c,
        ]
    )
