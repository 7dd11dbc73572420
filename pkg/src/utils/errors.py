"""Error types and error-envelope helpers."""

from typing import Any, Dict, NoReturn, Optional

from fastapi import HTTPException
from pydantic import BaseModel


class HbtmError(Exception):
    """Base class for every error raised by the heartbeat toolkit."""

    error_code = "HBTM_ERROR"

    def __init__(self, message: str, error_code: Optional[str] = None):
        super().__init__(message)
        if error_code is not None:
            self.error_code = error_code


class DuplicateThreadIdError(HbtmError):
    error_code = "DUPLICATE_THREAD_ID"


class AlreadyFinishedError(HbtmError):
    error_code = "ALREADY_FINISHED"


class AfterExitError(HbtmError):
    """Raised when a thread emits a heartbeat after its exit marker."""

    error_code = "AFTER_EXIT"


class UnknownThreadIdError(HbtmError):
    error_code = "UNKNOWN_THREAD_ID"


class ClockRegressionError(HbtmError):
    error_code = "CLOCK_REGRESSION"


class LogIOError(HbtmError):
    error_code = "LOG_IO_ERROR"


class MalformedRecordError(HbtmError):
    """Raised by the log parser; carries the 1-based offending line number."""

    error_code = "MALFORMED_RECORD"

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class SingletonRingError(HbtmError):
    error_code = "SINGLETON_RING"


class NoLiveThreadsError(HbtmError):
    error_code = "NO_LIVE_THREADS"


class NonPositiveRateError(HbtmError):
    error_code = "NON_POSITIVE_RATE"


class InvalidSpecError(HbtmError):
    error_code = "INVALID_SPEC"


class ZeroBaselineError(HbtmError):
    error_code = "ZERO_BASELINE"


class ConfigError(HbtmError):
    error_code = "CONFIG_ERROR"


class WorkloadFailureError(HbtmError):
    """A kernel's result disagreed with its sequential reference."""

    error_code = "WORKLOAD_FAILURE"


class ErrorDetail(BaseModel):
    code: int
    message: str


class ErrorResponse(BaseModel):
    """Body of every non-2xx status API response."""

    error: ErrorDetail


def create_error_response(code: int, message: str) -> Dict[str, Any]:
    return ErrorResponse(error=ErrorDetail(code=code, message=message)).model_dump()


def raise_http_error(status_code: int, message: str) -> NoReturn:
    """Abort the request; the app's handler returns ``detail`` as the body."""
    raise HTTPException(status_code=status_code, detail=create_error_response(status_code, message))
