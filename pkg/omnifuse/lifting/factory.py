from omnifuse.errors import ConfigError

from .external import ExternalLifter
from .oracle import OracleLifter, OracleLifterConfig


def create_lifter(lifter_type, *, truth=None, config=None, path=None):
    lifter_type = lifter_type.lower()

    if lifter_type == "oracle":
        if truth is None:
            raise ConfigError("oracle lifter needs scene truth")
        return OracleLifter(truth, config or OracleLifterConfig())

    if lifter_type == "external":
        if path is None:
            raise ConfigError("external lifter needs a lift-record file")
        return ExternalLifter(path)

    raise ConfigError(f"Unsupported lifter: {lifter_type}")
