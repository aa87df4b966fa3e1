"""Exception hierarchy shared by every resonate module.

Each error knows the process exit code the CLI should use and can be
rendered as the structured ``error.json`` document written into a run
directory.
"""

from typing import Any, Dict, Optional

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISSING_ARTIFACT = 4


class ResonateError(Exception):
    """Base class for all errors raised by resonate."""

    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = dict(details or {})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "details": self.details,
        }


class ConfigError(ResonateError, ValueError):
    """Invalid configuration file or override."""

    exit_code = EXIT_CONFIG


class MissingArtifactError(ResonateError, FileNotFoundError):
    """A command needs an upstream artifact that is not in the run directory."""

    exit_code = EXIT_MISSING_ARTIFACT


class NumericalGuardError(ResonateError):
    """A numerical precondition or postcondition failed."""

    exit_code = EXIT_NUMERICAL


class GeometryError(NumericalGuardError, ValueError):
    pass


class MeshError(NumericalGuardError):
    pass


class GradingError(MeshError):
    """The mesher could not meet the quality bound; names the offending region."""

    def __init__(self, message: str, region: str, details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        details["region"] = region
        super().__init__(message, details)
        self.region = region


class AssemblyError(NumericalGuardError):
    pass


class SolverError(NumericalGuardError):
    """Singular or near-singular factorization; carries the pivot magnitude."""

    def __init__(self, message: str, pivot: Optional[float] = None, details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        if pivot is not None:
            details["pivot"] = float(pivot)
        super().__init__(message, details)
        self.pivot = pivot


class EigenSolverError(NumericalGuardError):
    pass


class TrackingError(NumericalGuardError):
    pass


class ResonanceNotFound(NumericalGuardError):
    pass


class FitRefused(NumericalGuardError):
    pass


class SpectrumProximity(NumericalGuardError):
    pass


class ContourError(NumericalGuardError):
    pass


class HypothesisError(NumericalGuardError):
    pass


class UnstableNodalCount(NumericalGuardError):
    pass


class FilterError(NumericalGuardError):
    pass


class CFLViolation(NumericalGuardError, ValueError):
    pass
