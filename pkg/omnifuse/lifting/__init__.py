from .base import BaseLifter, LiftContext
from .external import ExternalLifter, ingest_external_lift
from .factory import create_lifter
from .oracle import OracleLifter, OracleLifterConfig, oracle_lift

__all__ = [
    "BaseLifter",
    "ExternalLifter",
    "LiftContext",
    "OracleLifter",
    "OracleLifterConfig",
    "create_lifter",
    "ingest_external_lift",
    "oracle_lift",
]
