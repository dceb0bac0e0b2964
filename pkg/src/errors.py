"""Exception types for Gamma-VAE.

Library code raises these; the CLI maps ``exit_code`` to the process status.
"""

from typing import Any, List, Optional, Sequence


class GammaVaeError(Exception):
    """Base class for all Gamma-VAE errors."""

    exit_code = 1
    kind = "error"


class ParseError(GammaVaeError):
    """Input file could not be parsed."""

    exit_code = 2
    kind = "parse_error"

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column!r}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.line = line
        self.column = column


class ConfigError(ParseError):
    """Invalid or unknown configuration value."""

    kind = "config_error"


class ShapeError(GammaVaeError, ValueError):
    """Array dimensions do not match."""

    exit_code = 3
    kind = "shape_error"


class DomainError(GammaVaeError, ValueError):
    """Input outside the valid domain of an operation."""

    exit_code = 3
    kind = "domain_error"


class InsufficientPointsError(DomainError):
    kind = "insufficient_points"


class DegenerateSplitError(DomainError):
    kind = "degenerate_split"


class UndefinedCorrelationError(DomainError):
    kind = "undefined_correlation"


class MissingSamplesError(DomainError):
    kind = "missing_samples"


class OutputExistsError(DomainError):
    kind = "output_exists"


class DivergedTrainingError(GammaVaeError):
    """Loss became non-finite; carries the offending term and the partial log."""

    exit_code = 4
    kind = "diverged_training"

    def __init__(self, term: str, value: float, log: Optional[List[Any]] = None):
        super().__init__(f"non-finite loss term {term!r} (value {value})")
        self.term = term
        self.value = value
        self.log = list(log or [])


class SingularMetricError(GammaVaeError):
    """Metric factorization failed even after jitter."""

    exit_code = 5
    kind = "singular_metric"

    def __init__(self, point: Sequence[float], jitter: float):
        point = [float(p) for p in point]
        super().__init__(f"metric not positive definite at z={point} (jitter {jitter:g})")
        self.point = point
        self.jitter = jitter


class DegenerateTangentError(GammaVaeError):
    """Jacobian lacks full column rank."""

    exit_code = 5
    kind = "degenerate_tangent"
