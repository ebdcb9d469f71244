from typing import TYPE_CHECKING

from app.errors.schemas import ErrorSchema

if TYPE_CHECKING:
    from app.models.state import IterationDiagnostics


class ExitCode:
    """Process exit codes of the command-line interface."""

    OK = 0
    CONFIG = 1
    FAILED_TRIALS = 2
    VERIFY_FAILED = 3


class HvmpError(Exception):
    """Base class for all library exceptions."""

    exit_code: int = ExitCode.CONFIG
    error_code: str = "hvmp_error"
    message: str = "Something went wrong"

    def __init__(self, message: str | None = None) -> None:
        self.message = message or self.message
        super().__init__(self.message)

    def to_pydantic(self) -> ErrorSchema:
        """Convert the exception into a Pydantic error schema."""
        return ErrorSchema(
            error_code=self.error_code,
            message=self.message,
        )


class DimensionError(HvmpError):
    """Raised when matrix or vector shapes do not match an operation."""

    error_code = "dimension_mismatch"
    message = "Operand shapes do not match."


class SingularityError(HvmpError):
    """Raised when a covariance or system matrix is numerically singular."""

    error_code = "singular_matrix"

    def __init__(self, matrix_name: str, message: str | None = None) -> None:
        self.matrix_name = matrix_name
        super().__init__(message or f"{matrix_name} is numerically singular")


class SizeGuardError(HvmpError):
    """Raised when a Kronecker-scale allocation exceeds the configured guard."""

    error_code = "size_guard_exceeded"

    def __init__(self, requested: int, guard: int) -> None:
        super().__init__(
            f"Requested {requested} entries exceeds the guard of {guard}; use the matrix-form path instead.",
        )


class DomainError(HvmpError):
    """Raised when an argument lies outside the domain of an operation."""

    error_code = "domain_error"
    message = "Argument outside the domain of the operation."


class NumericDivergenceError(HvmpError):
    """Raised when an iteration produces non-finite values."""

    error_code = "numeric_divergence"

    def __init__(self, iteration: int, where: str = "AMP") -> None:
        self.iteration = iteration
        super().__init__(f"{where} produced non-finite values at iteration {iteration}")


class NumericError(HvmpError):
    """Raised when a numerical factorization fails."""

    error_code = "numeric_error"
    message = "Numerical factorization failed."


class InfeasibleOperatorError(HvmpError):
    """Raised when operator dimensions do not admit the requested selection."""

    error_code = "infeasible_operator"
    message = "Operator dimensions are infeasible for the requested mode."


class ConfigError(HvmpError):
    """Raised when a configuration file or override cannot be applied."""

    exit_code = ExitCode.CONFIG
    error_code = "config_error"
    message = "Invalid configuration."


class InstanceFormatError(HvmpError):
    """Raised when an instance bundle on disk is malformed."""

    error_code = "instance_format"
    message = "Instance bundle is malformed."


class EngineStepError(HvmpError):
    """Raised when one of the five steps of an engine iteration fails."""

    exit_code = ExitCode.FAILED_TRIALS
    error_code = "engine_step_failed"

    def __init__(self, step: int, name: str, cause: HvmpError) -> None:
        self.step = step
        self.name = name
        self.cause = cause
        super().__init__(f"step {step} ({name}) failed: {cause.message}")


class EngineRunError(HvmpError):
    """Raised when an engine run aborts; carries the diagnostics recorded so far."""

    exit_code = ExitCode.FAILED_TRIALS
    error_code = "engine_run_failed"

    def __init__(self, cause: HvmpError, trajectory: "list[IterationDiagnostics]") -> None:
        self.cause = cause
        self.trajectory = trajectory
        super().__init__(f"run aborted after {len(trajectory)} iterations: {cause.message}")
