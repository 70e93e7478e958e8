from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from omnifuse.geometry import DEFAULT_C, CameraModel, NormalizedPose2D, PerspectiveView


@dataclass(frozen=True)
class LiftContext:
    """What the pipeline knows about a pose when it asks for depth offsets."""

    frame_id: int
    person_id: Any
    c: float = DEFAULT_C
    camera: CameraModel = CameraModel()
    view: Optional[PerspectiveView] = None


class BaseLifter(ABC):
    """
    Abstract base class for 2D -> 3D lifters.

    A lifter returns one depth offset per keypoint, relative to the root at
    distance c, including occluded keypoints. The root offset is 0.
    Implementations are called from the pipeline thread only.
    """

    name = "base"

    @abstractmethod
    def lift(self, pose: NormalizedPose2D, context: LiftContext) -> np.ndarray:
        """Return a (15,) array of depth offsets."""
        pass
