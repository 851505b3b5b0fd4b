"""Error taxonomy. Every error carries a stable machine code for the API/CLI."""

from __future__ import annotations

from typing import Any


class NlflowError(Exception):
    """Base class; `code` is the stable machine string exposed over the API."""

    code = "internal"

    def __init__(self, message: str, *, details: Any = None):
        super().__init__(message)
        self.message = message
        self.details = details


class ParseError(NlflowError):
    code = "parse_error"

    def __init__(self, message: str, *, path: str = "$", details: Any = None):
        super().__init__(message, details=details)
        self.path = path


class VersionMismatchError(NlflowError):
    code = "version_mismatch"


class ValidationFailedError(NlflowError):
    code = "validation_failed"

    def __init__(self, message: str, *, report: Any = None):
        super().__init__(message, details=report)
        self.report = report


class UnknownIdError(NlflowError):
    code = "unknown_id"


class IndexMismatchError(NlflowError):
    code = "index_mismatch"


class ConflictError(NlflowError):
    code = "conflict"


class ConcurrentRunError(ConflictError):
    code = "concurrent_run"


class ConsumedSuggestionError(ConflictError):
    code = "suggestion_consumed"


class StageError(NlflowError):
    """Raised by a pipeline stage; `stage` names the failing stage."""

    code = "stage_error"

    def __init__(self, message: str, *, stage: str = "", details: Any = None):
        super().__init__(message, details=details)
        self.stage = stage


class EmptyQueryError(StageError):
    code = "empty_query"


class UninterpretableFeedbackError(StageError):
    code = "uninterpretable_feedback"


class IterationLimitError(StageError):
    code = "iteration_limit_exceeded"


class PlanFinalError(StageError):
    code = "plan_final"


class ProviderUnavailableError(NlflowError):
    code = "provider_unavailable"


class MalformedResponseError(NlflowError):
    code = "malformed_response"


class GatewayTimeoutError(NlflowError):
    code = "gateway_timeout"


class EmptyTextError(NlflowError):
    code = "empty_text"


class EmptyPoolError(NlflowError):
    code = "empty_pool"


class InvalidExpressionError(NlflowError):
    code = "invalid_expression"


class InvalidTimezoneError(NlflowError):
    code = "invalid_timezone"


class NotReadyError(ValidationFailedError):
    code = "not_ready"


class ExecutorFailure(NlflowError):
    code = "executor_failure"


class UnknownFieldWarning(UserWarning):
    """Emitted when deserialization skips a field it does not recognize."""
