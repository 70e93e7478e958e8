"""
The 15-joint skeleton shared by the simulator, lifter, pipeline and metrics.

The joint set is pelvis (root), hips, knees, ankles, neck, nose, shoulders,
elbows and wrists: the joints a 2D body-keypoint detector reports, taken from
the common 17-joint motion-capture layout without spine and head-top.
"""

from enum import Enum, IntEnum
from typing import Dict, Tuple

import numpy as np

N_JOINTS = 15


class Joint(IntEnum):
    PELVIS = 0
    R_HIP = 1
    R_KNEE = 2
    R_ANKLE = 3
    L_HIP = 4
    L_KNEE = 5
    L_ANKLE = 6
    NECK = 7
    NOSE = 8
    L_SHOULDER = 9
    L_ELBOW = 10
    L_WRIST = 11
    R_SHOULDER = 12
    R_ELBOW = 13
    R_WRIST = 14


ROOT = Joint.PELVIS
ANKLES = (Joint.L_ANKLE, Joint.R_ANKLE)

# parent of each joint in the kinematic tree; the root is its own parent
PARENTS: Tuple[int, ...] = (
    Joint.PELVIS,
    Joint.PELVIS,
    Joint.R_HIP,
    Joint.R_KNEE,
    Joint.PELVIS,
    Joint.L_HIP,
    Joint.L_KNEE,
    Joint.PELVIS,
    Joint.NECK,
    Joint.NECK,
    Joint.L_SHOULDER,
    Joint.L_ELBOW,
    Joint.NECK,
    Joint.R_SHOULDER,
    Joint.R_ELBOW,
)

# left/right counterpart of each joint; midline joints map to themselves
MIRROR: Tuple[int, ...] = (
    Joint.PELVIS,
    Joint.L_HIP,
    Joint.L_KNEE,
    Joint.L_ANKLE,
    Joint.R_HIP,
    Joint.R_KNEE,
    Joint.R_ANKLE,
    Joint.NECK,
    Joint.NOSE,
    Joint.R_SHOULDER,
    Joint.R_ELBOW,
    Joint.R_WRIST,
    Joint.L_SHOULDER,
    Joint.L_ELBOW,
    Joint.L_WRIST,
)


class OcclusionScenario(str, Enum):
    NONE = "none"
    LEFT_ARM = "left_arm"
    LEFT_LEG = "left_leg"
    RIGHT_ARM = "right_arm"
    RIGHT_LEG = "right_leg"
    LEFT_ARM_AND_LEG = "left_arm_and_leg"
    RIGHT_ARM_AND_LEG = "right_arm_and_leg"
    BOTH_LEGS = "both_legs"
    TORSO = "torso"

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    OcclusionScenario.NONE: "None",
    OcclusionScenario.LEFT_ARM: "Left Arm",
    OcclusionScenario.LEFT_LEG: "Left Leg",
    OcclusionScenario.RIGHT_ARM: "Right Arm",
    OcclusionScenario.RIGHT_LEG: "Right Leg",
    OcclusionScenario.LEFT_ARM_AND_LEG: "Left Arm & Leg",
    OcclusionScenario.RIGHT_ARM_AND_LEG: "Right Arm & Leg",
    OcclusionScenario.BOTH_LEGS: "Both Legs",
    OcclusionScenario.TORSO: "Torso",
}

_LEFT_ARM = (Joint.L_SHOULDER, Joint.L_ELBOW, Joint.L_WRIST)
_RIGHT_ARM = (Joint.R_SHOULDER, Joint.R_ELBOW, Joint.R_WRIST)
_LEFT_LEG = (Joint.L_KNEE, Joint.L_ANKLE)
_RIGHT_LEG = (Joint.R_KNEE, Joint.R_ANKLE)

# arm = shoulder+elbow+wrist, leg = knee+ankle, torso = hips+neck
OCCLUSION_MASKS: Dict[OcclusionScenario, Tuple[Joint, ...]] = {
    OcclusionScenario.NONE: (),
    OcclusionScenario.LEFT_ARM: _LEFT_ARM,
    OcclusionScenario.LEFT_LEG: _LEFT_LEG,
    OcclusionScenario.RIGHT_ARM: _RIGHT_ARM,
    OcclusionScenario.RIGHT_LEG: _RIGHT_LEG,
    OcclusionScenario.LEFT_ARM_AND_LEG: _LEFT_ARM + _LEFT_LEG,
    OcclusionScenario.RIGHT_ARM_AND_LEG: _RIGHT_ARM + _RIGHT_LEG,
    OcclusionScenario.BOTH_LEGS: _LEFT_LEG + _RIGHT_LEG,
    OcclusionScenario.TORSO: (Joint.L_HIP, Joint.R_HIP, Joint.NECK),
}

SINGLE_LIMB_SCENARIOS = (
    OcclusionScenario.LEFT_ARM,
    OcclusionScenario.LEFT_LEG,
    OcclusionScenario.RIGHT_ARM,
    OcclusionScenario.RIGHT_LEG,
)
ARM_AND_LEG_SCENARIOS = (
    OcclusionScenario.LEFT_ARM_AND_LEG,
    OcclusionScenario.RIGHT_ARM_AND_LEG,
)


def occlusion_mask(scenario: OcclusionScenario) -> np.ndarray:
    """Boolean (15,) mask, True on the joints the scenario hides."""
    mask = np.zeros(N_JOINTS, dtype=bool)
    mask[list(OCCLUSION_MASKS[OcclusionScenario(scenario)])] = True
    return mask


# Canonical standing person, 1.7 m tall (head top, not a keypoint), in the
# camera-facing frame: x to the camera's right, y up, z along the viewing ray.
# The person faces the camera, so their left side sits at +x. Ankles touch y=0.
TEMPLATE_HEIGHT_M = 1.7
CANONICAL_TEMPLATE = np.array(
    [
        [0.00, 0.95, 0.0],  # pelvis
        [-0.10, 0.95, 0.0],  # r_hip
        [-0.10, 0.50, 0.0],  # r_knee
        [-0.10, 0.00, 0.0],  # r_ankle
        [0.10, 0.95, 0.0],  # l_hip
        [0.10, 0.50, 0.0],  # l_knee
        [0.10, 0.00, 0.0],  # l_ankle
        [0.00, 1.45, 0.0],  # neck
        [0.00, 1.58, 0.0],  # nose
        [0.18, 1.42, 0.0],  # l_shoulder
        [0.24, 1.15, 0.0],  # l_elbow
        [0.27, 0.90, 0.0],  # l_wrist
        [-0.18, 1.42, 0.0],  # r_shoulder
        [-0.24, 1.15, 0.0],  # r_elbow
        [-0.27, 0.90, 0.0],  # r_wrist
    ]
)
CANONICAL_TEMPLATE.setflags(write=False)


def canonical_world_scale(c: float) -> float:
    """
    Meters per lateral lifting unit for the fixed scale mode.

    Fixed mode assumes every person spans the template's largest
    pelvis-relative radius in the image plane. A normalized pose has unit
    radius and is lifted to depth c, so one lateral unit is that radius
    divided by c.
    """
    offsets = CANONICAL_TEMPLATE[:, :2] - CANONICAL_TEMPLATE[ROOT, :2]
    return float(np.max(np.linalg.norm(offsets, axis=1)) / c)
