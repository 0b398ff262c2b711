"""Exception hierarchy shared across the package.

Callers that orchestrate multi-stage runs map these onto process exit
codes, so the split between validation-type and runtime-type errors is
load-bearing.
"""


class PwsError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PwsError):
    """Input data or configuration violates a documented invariant."""


class ParseError(ValidationError):
    """A serialized artifact could not be decoded.

    Carries the offending row number when the format is row-oriented.
    """

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class RenderError(PwsError):
    """A prompt template referenced a placeholder the example lacks."""

    def __init__(self, placeholder: str):
        super().__init__(f"unresolved placeholder: {placeholder}")
        self.placeholder = placeholder


class ContractError(PwsError):
    """An operation was called in a way its contract forbids."""


class ConfigError(ValidationError):
    """A config file or rulebook is structurally invalid."""


class ProtocolError(PwsError):
    """A backend reply does not conform to the wire contract."""


class TransientBackendError(PwsError):
    """A retryable backend failure (timeouts, 5xx, connection resets)."""


class BackendError(PwsError):
    """A backend failure that survived the retry budget."""


class CalibrationError(PwsError):
    """Content-free estimation failed; no partial averaging is allowed."""


class TrainingError(PwsError):
    """End-model training produced a non-finite loss or diverged."""


class StageError(PwsError):
    """A pipeline stage failed; the run directory stays resumable."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
