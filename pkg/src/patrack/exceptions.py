"""
PATrack - Custom Exceptions.

Centralized exception hierarchy. Every failure carries a machine-readable code
and the process exit code the CLI reports for it.
"""

from typing import Any


class PatrackException(Exception):
    """Base exception for PATrack."""

    def __init__(
        self,
        code: str,
        message: str,
        exit_code: int = 1,
        details: dict[str, Any] | None = None,
    ):
        self.code = code
        self.message = message
        self.exit_code = exit_code
        self.details = details
        super().__init__(message)

    def to_dict(self) -> dict[str, Any]:
        """Return the error as a JSON-safe dictionary."""
        return {"code": self.code, "message": self.message, "details": self.details}


class ConfigurationException(PatrackException):
    """Raised when a configuration value is invalid or inconsistent."""

    def __init__(self, message: str, key: str | None = None, details: dict[str, Any] | None = None):
        merged = dict(details or {})
        if key:
            merged["key"] = key
        super().__init__(
            code="CONFIG_ERROR",
            message=message,
            exit_code=2,
            details=merged or None,
        )


class DimensionException(PatrackException):
    """Raised when tensor shapes do not line up."""

    def __init__(self, op: str, *shapes: tuple[int, ...], reason: str = "shape mismatch"):
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(
            code="DIMENSION_MISMATCH",
            message=f"{op}: {reason}: {rendered}",
            exit_code=2,
            details={"op": op, "shapes": [list(s) for s in shapes]},
        )


class UsageException(PatrackException):
    """Raised when an API is called outside its contract."""

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        super().__init__(code="USAGE_ERROR", message=message, exit_code=2, details=details)


class InputException(PatrackException):
    """Raised for invalid input data (images, boxes, datasets)."""

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        super().__init__(code="INVALID_INPUT", message=message, exit_code=2, details=details)


class UndefinedResultException(PatrackException):
    """Raised when a metric is requested over an empty set."""

    def __init__(self, metric: str):
        super().__init__(
            code="UNDEFINED_RESULT",
            message=f"{metric} is undefined on empty input",
            exit_code=2,
            details={"metric": metric},
        )


class StorageException(PatrackException):
    """Raised when a file cannot be read or written."""

    def __init__(self, path: str, message: str):
        super().__init__(
            code="IO_ERROR",
            message=f"{path}: {message}",
            exit_code=3,
            details={"path": path},
        )


class ParseException(PatrackException):
    """Raised when an on-disk file is malformed."""

    def __init__(self, path: str, message: str, line: int | None = None):
        where = f"{path}:{line}" if line is not None else path
        super().__init__(
            code="PARSE_ERROR",
            message=f"{where}: {message}",
            exit_code=3,
            details={"path": path, "line": line},
        )


class NumericFailureException(PatrackException):
    """Raised when a computation produces NaN or inf."""

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        super().__init__(code="NUMERIC_FAILURE", message=message, exit_code=4, details=details)


class IntegrityException(PatrackException):
    """Raised when a stored digest does not match its payload."""

    def __init__(self, path: str, tensor: str, expected: int, actual: int):
        super().__init__(
            code="INTEGRITY_ERROR",
            message=f"{path}: digest mismatch for '{tensor}' (expected {expected:08x}, got {actual:08x})",
            exit_code=5,
            details={"path": path, "tensor": tensor, "expected": expected, "actual": actual},
        )


class VerificationException(PatrackException):
    """Raised when a gradient check exceeds its tolerance."""

    def __init__(self, component: str, max_rel_error: float, tolerance: float, coordinate: str):
        super().__init__(
            code="VERIFICATION_FAILED",
            message=(
                f"gradient check failed for {component}: max rel err {max_rel_error:.3e} "
                f">= {tolerance:.0e} at {coordinate}"
            ),
            exit_code=6,
            details={
                "component": component,
                "max_rel_error": max_rel_error,
                "tolerance": tolerance,
                "coordinate": coordinate,
            },
        )
