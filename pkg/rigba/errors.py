"""Exception hierarchy for rigba.

Every error carries a stable upper-snake ``error`` code and a human-readable ``message``,
rendered through :class:`rigba.schemas.errors.ErrorResponse` when surfaced by the CLI.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from rigba.schemas.errors import ErrorResponse
    from rigba.schemas.solver import SolveReport


class RigBAError(Exception):
    """Base class for all rigba errors."""

    error: str = "RIGBA_ERROR"

    def __init__(self, message: str, *, details: list[dict[str, Any]] | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = details

    def to_response(self) -> ErrorResponse:
        from rigba.schemas.errors import ErrorDetail, ErrorResponse

        details = [ErrorDetail(**d) for d in self.details] if self.details else None
        return ErrorResponse(error=self.error, message=self.message, details=details)


class DomainError(RigBAError, ValueError):
    """Numeric input outside an operation's domain (negative Huber argument, N_t = 0, ...)."""

    error = "DOMAIN_ERROR"


class CheiralityViolation(RigBAError):
    """A point lies behind or on the camera plane."""

    error = "CHEIRALITY_VIOLATION"

    def __init__(self, depth: float) -> None:
        super().__init__(f"Point has non-positive camera-frame depth {depth:.3e}")
        self.depth = depth


class NumericalFailure(RigBAError):
    error = "NUMERICAL_FAILURE"


class NotConverged(RigBAError):
    """Iteration limit reached; ``report`` holds the best state's trace."""

    error = "NOT_CONVERGED"

    def __init__(self, message: str, report: SolveReport) -> None:
        super().__init__(message)
        self.report = report


class InsufficientOverlap(RigBAError):
    error = "INSUFFICIENT_OVERLAP"

    def __init__(self, time_index: int, image_id: int, shared: int, required: int) -> None:
        super().__init__(
            f"Image {image_id} at time index {time_index} shares {shared} reconstructed "
            f"landmarks (need {required})"
        )
        self.time_index = time_index
        self.image_id = image_id
        self.shared = shared


class GaugeError(RigBAError):
    error = "GAUGE_ERROR"


class PreconditionViolation(RigBAError):
    error = "PRECONDITION_VIOLATION"


class DegenerateScene(RigBAError):
    error = "DEGENERATE_SCENE"


class DegenerateConfiguration(RigBAError):
    error = "DEGENERATE_CONFIGURATION"


class EvaluationError(RigBAError):
    error = "EVALUATION_ERROR"


class ConfigError(RigBAError):
    error = "CONFIG_ERROR"


class ParseError(RigBAError):
    """Malformed problem file; names the line and the record kind."""

    error = "PARSE_ERROR"

    def __init__(self, line_number: int, record_kind: str, message: str) -> None:
        super().__init__(
            f"line {line_number}: {record_kind}: {message}",
            details=[{"field": record_kind, "message": f"line {line_number}: {message}"}],
        )
        self.line_number = line_number
        self.record_kind = record_kind
