"""Exception hierarchy shared across the harness.

The CLI maps these onto exit codes: validation failures exit 1, endpoint
failures exit 2, anything else exit 3.
"""


class HarnessError(Exception):
    """Base class for all harness errors."""


class ValidationError(HarnessError):
    """Invalid input data, configuration, or arguments."""


class ManifestError(ValidationError):
    """Line-delimited record file failed validation.

    Carries the offending line numbers so callers can report them.
    """

    def __init__(self, message: str, lines: list[int] | None = None):
        super().__init__(message)
        self.lines = lines or []


class ScoreRangeError(ValidationError):
    """A score fell outside its required range."""


class EndpointError(HarnessError):
    """A model endpoint failed (transport, timeout, or server error)."""


class MalformedReplyError(EndpointError):
    """An endpoint replied with a body that violates its wire contract."""


class PartialScoringError(EndpointError):
    """Exhaustive rescoring could not score every piece."""

    def __init__(self, message: str, unscored: list[str]):
        super().__init__(message)
        self.unscored = unscored


class PipelineError(EndpointError):
    """A pipeline stage failed; carries the partial trace built so far."""

    def __init__(self, message: str, partial_trace=None):
        super().__init__(message)
        self.partial_trace = partial_trace


class UnknownTaskError(ValidationError):
    """Referenced annotation task does not exist."""


class ClosedTaskError(HarnessError):
    """Referenced annotation task is closed for submissions."""
