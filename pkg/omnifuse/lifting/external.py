import logging
from pathlib import Path
from typing import Any, Union

import numpy as np

from omnifuse.errors import LiftRecordNotFoundError
from omnifuse.geometry import NormalizedPose2D
from omnifuse.records import read_lift_records

from .base import BaseLifter, LiftContext

logger = logging.getLogger(__name__)


def ingest_external_lift(path: Union[str, Path], frame_id: int, person_id: Any) -> np.ndarray:
    """
    Read the depth offsets recorded for one (frame_id, person_id).

    Raises
    ------
    ParseError
        A row of the file is malformed or holds the wrong number of offsets.
    ValidationError
        A record's root offset is not 0.
    LiftRecordNotFoundError
        The file has no record for the key.
    """
    records = read_lift_records(path)
    try:
        return records[(frame_id, person_id)]
    except KeyError:
        raise LiftRecordNotFoundError(
            f"{path}: no lift record for frame {frame_id}, person {person_id!r}"
        ) from None


class ExternalLifter(BaseLifter):
    """Replays depth offsets computed by an external model, keyed by (frame_id, person_id)."""

    name = "external"

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._records = read_lift_records(self.path)
        logger.info("Loaded %d lift records from %s", len(self._records), self.path)

    def lift(self, pose: NormalizedPose2D, context: LiftContext) -> np.ndarray:
        try:
            return self._records[(context.frame_id, context.person_id)].copy()
        except KeyError:
            raise LiftRecordNotFoundError(
                f"{self.path}: no lift record for frame {context.frame_id}, "
                f"person {context.person_id!r}"
            ) from None
