"""
Ground-truth-backed lifter for simulation.

The oracle reads the true skeleton, expresses it in the lifting frame and
returns its depth offsets plus seeded noise:

* ``noise_std``: independent Gaussian noise on every joint;
* ``occlusion_penalty``: noise on every bone touching an occluded joint,
  accumulated from the root outward along the kinematic tree, so hiding an
  upstream joint (hip, neck) disturbs everything below it. A bone whose
  left/right counterpart is unaffected gets ``MIRROR_SUPPORT`` times the
  penalty: a learned lifter can borrow the visible side.

All noise vectors are drawn in a fixed order whatever the occlusion mask, so
two scenarios evaluated with the same seed share their random numbers.
"""

import logging
import zlib
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from omnifuse.errors import InputError, LiftRecordNotFoundError
from omnifuse.geometry import NormalizedPose2D, root_view, world_to_lifting
from omnifuse.skeleton import MIRROR, N_JOINTS, PARENTS, ROOT

from .base import BaseLifter, LiftContext

logger = logging.getLogger(__name__)

MIRROR_SUPPORT = 0.5


@dataclass(frozen=True)
class OracleLifterConfig:
    noise_std: float = 0.0
    occlusion_penalty: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise InputError("noise_std must be >= 0")
        if self.occlusion_penalty < 0:
            raise InputError("occlusion_penalty must be >= 0")


def _stream_id(value: Any) -> int:
    if isinstance(value, (int, np.integer)) and value >= 0:
        return int(value)
    return zlib.crc32(repr(value).encode("utf-8"))


def oracle_lift(
    truth_lifting: np.ndarray,
    c: float,
    config: OracleLifterConfig,
    occlusion_mask: Optional[np.ndarray] = None,
    frame_id: int = 0,
    person_id: Any = 0,
) -> np.ndarray:
    """
    Depth offsets of a lifting-frame skeleton (root at (0, 0, c)), with noise.
    """
    truth_lifting = np.asarray(truth_lifting, dtype=float)
    if truth_lifting.shape != (N_JOINTS, 3):
        raise InputError(f"expected a ({N_JOINTS}, 3) skeleton, got {truth_lifting.shape}")
    mask = (
        np.zeros(N_JOINTS, dtype=bool)
        if occlusion_mask is None
        else np.asarray(occlusion_mask, dtype=bool)
    )

    rng = np.random.default_rng([config.seed, _stream_id(frame_id), _stream_id(person_id)])
    joint_noise = rng.normal(0.0, 1.0, N_JOINTS) * config.noise_std
    bone_noise = rng.normal(0.0, 1.0, N_JOINTS) * config.occlusion_penalty

    parents = np.asarray(PARENTS)
    affected = mask | mask[parents]
    affected[ROOT] = False
    mirror = np.asarray(MIRROR)
    supported = (mirror != np.arange(N_JOINTS)) & ~affected[mirror]
    bone_noise = np.where(affected, bone_noise, 0.0) * np.where(supported, MIRROR_SUPPORT, 1.0)
    drift = np.zeros(N_JOINTS)
    for j in range(1, N_JOINTS):
        drift[j] = drift[PARENTS[j]] + bone_noise[j]

    offsets = truth_lifting[:, 2] - c + joint_noise + drift
    offsets[ROOT] = 0.0
    return offsets


class OracleLifter(BaseLifter):
    """
    Looks the person up in the scene truth by ``context.person_id``.

    Pure given its seed; safe to share between threads.
    """

    name = "oracle"

    def __init__(self, truth, config: OracleLifterConfig = OracleLifterConfig()):
        self.truth = truth
        self.config = config

    def lift(self, pose: NormalizedPose2D, context: LiftContext) -> np.ndarray:
        try:
            skeleton = self.truth.skeleton(context.frame_id, context.person_id)
        except (KeyError, InputError):
            raise LiftRecordNotFoundError(
                f"no ground truth for frame {context.frame_id}, person {context.person_id!r}"
            ) from None
        # depth offsets along the truth pelvis ray, in units of its distance over c
        view, distance = root_view(skeleton, context.camera)
        truth_lifting = world_to_lifting(skeleton, context.c, distance / context.c, view)
        return oracle_lift(
            truth_lifting,
            context.c,
            self.config,
            occlusion_mask=pose.occlusion_mask,
            frame_id=context.frame_id,
            person_id=context.person_id,
        )
