"""
Exception hierarchy shared by every omnifuse module.

Errors that amount to "bad argument" also derive from the matching builtin
(``ValueError``, ``KeyError``, ``RuntimeError``) so callers that only know the
builtins still catch them.
"""

from pathlib import Path
from typing import Any, Optional, Union


class OmnifuseError(Exception):
    """Base class for all omnifuse errors."""


class InputError(OmnifuseError, ValueError):
    """An argument violates an operation's precondition."""


class DomainError(InputError):
    """A value lies outside the domain of a geometric map."""


class NormalizationError(InputError):
    """A 2D pose cannot be normalized (occluded pelvis or too few joints)."""


class ValidationError(InputError):
    """A well-formed record breaks a convention (e.g. non-zero root offset)."""


class ConfigError(InputError):
    """Invalid or unknown configuration value."""


class DegenerateFitError(InputError):
    """Too few or collinear samples for a least-squares fit."""


class AlignmentError(InputError):
    """Point configuration of rank < 2 cannot be Procrustes-aligned."""


class ConvergenceError(OmnifuseError):
    """
    Levenberg-Marquardt did not converge within its iteration limit.

    Parameters
    ----------
    message : str
        Description of the failure.
    best : Any
        Best-so-far estimate, usable by callers that accept a partial fit.
    """

    def __init__(self, message: str, best: Any = None):
        super().__init__(message)
        self.best = best


class LifecycleError(OmnifuseError, RuntimeError):
    """Operation invalid for the current state of a sensor hub."""


class RegistrationError(OmnifuseError, KeyError):
    """Unknown sensor id."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class SyncError(OmnifuseError):
    """Inputs to a fusion step come from different ticks."""


class StalledConsumerError(LifecycleError):
    """A blocked publisher waited longer than its timeout for space in the output queue."""


class LiftRecordNotFoundError(OmnifuseError, KeyError):
    """No lift record stored for the requested (frame_id, person_id)."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ParseError(InputError):
    """
    Malformed row in an input file.

    The message is rendered as ``path:line: reason``.
    """

    def __init__(self, path: Union[str, Path], line: Optional[int], reason: str):
        self.path = str(path)
        self.line = line
        self.reason = reason
        location = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{location}: {reason}")
