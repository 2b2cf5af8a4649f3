from typing import Any, Dict, Optional

EXIT_CONTRACT = 1
EXIT_IO = 2
# CLI exit codes stay within 0, 1 and 2
EXIT_INTERNAL = EXIT_CONTRACT


class AppException(Exception):
    """Root of every error raised by the pipeline.

    ``details`` carries machine-readable context (byte offset, step, point
    indices) and ``exit_code`` is what the command line returns for it.
    """

    exit_code: int = EXIT_IO

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.message = message
        self.error_code = error_code
        self.details: Dict[str, Any] = dict(details or {})

    def __str__(self) -> str:
        return f"{self.error_code}: {self.message}" if self.error_code else self.message

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}(message={self.message!r}, "
            f"error_code={self.error_code!r}, details={self.details!r})"
        )


class ContractViolationException(AppException):
    """A precondition on shape, size, range or checkpoint kind does not hold."""

    exit_code = EXIT_CONTRACT


class ValidationException(ContractViolationException):
    pass


class ConfigurationException(ContractViolationException):
    """Unknown, duplicate or out-of-range configuration key."""


class NumericalException(AppException):
    """NaN or Inf in a loss, gradient or sampler state."""

    exit_code = EXIT_CONTRACT


class DegenerateGeometryException(AppException):
    """Correspondences cannot determine a homography (``details["points"]``)."""

    exit_code = EXIT_CONTRACT


class DataFormatException(AppException):
    """Malformed image, checkpoint or text file; ``details["offset"]`` is the failing byte."""


class FileOperationException(AppException):
    pass
