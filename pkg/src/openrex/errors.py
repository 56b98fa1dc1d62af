"""Exception hierarchy shared across the package."""

from __future__ import annotations


class OpenRexError(Exception):
    """Base class for all package errors."""


class InvalidRelationName(OpenRexError):
    """A relation string normalized to the empty string."""


class ParseError(OpenRexError):
    """A dataset file or record could not be interpreted."""


class SplitError(OpenRexError):
    """A split specification does not match the corpus."""


class InsufficientInstances(OpenRexError):
    """A relation has fewer instances than the requested sample size."""


class SamplingError(OpenRexError):
    """Demonstration sampling constraints cannot be satisfied."""


class UnparseableOutput(OpenRexError):
    """No relation name could be recovered from generated text."""


class ShapeError(OpenRexError):
    """Mismatched sequence lengths or vocabulary sizes."""


class ParamError(OpenRexError):
    """A numeric parameter is outside its valid range."""


class AlignmentError(OpenRexError):
    """Prediction and gold maps do not cover the same instance ids."""


class ConfigError(OpenRexError):
    """An invalid runtime configuration."""


class BackendError(OpenRexError):
    """Base class for text-generation backend failures."""


class TransportError(BackendError):
    """The request never produced an HTTP response."""


class Timeout(BackendError):
    """The request, or its whole retry budget, timed out."""


class RateLimited(BackendError):
    """The server asked us to back off (retryable)."""


class ServerError(BackendError):
    """The server returned an error status or an unusable body."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class OracleError(BackendError):
    """The simulated oracle received a request it cannot ground."""


class DiscoveryAborted(OpenRexError):
    """Too many discovery attempts failed to keep the run meaningful."""
