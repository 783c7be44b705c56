"""Exception taxonomy shared across the pipeline.

Errors are split by how callers are expected to react: transport problems are
retriable, decode/integrity problems are not, and tool-unavailable is a
skippable condition rather than a failure.
"""

from __future__ import annotations


class ChartSentryError(Exception):
    """Base class for all errors raised by this package."""


class TransportError(ChartSentryError):
    """Network-level failure (connect/read/5xx). Safe to retry."""


class DecodeError(ChartSentryError):
    """A response or report body could not be decoded."""


class NotFoundError(ChartSentryError):
    """A remote object (chart archive, package) does not exist."""


class IntegrityError(ChartSentryError):
    """Cached bytes do not match their recorded digest."""


class RenderError(ChartSentryError):
    """The templating subprocess failed; carries captured stderr."""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


class EnvironmentError_(ChartSentryError):
    """A required external binary or file is missing."""


class ResourceLookupError(ChartSentryError):
    """No document matches the requested resource identity."""


class AmbiguousResourceError(ChartSentryError):
    """More than one document matches the requested resource identity."""


class PatchError(ChartSentryError):
    """A replacement snippet does not parse as a usable document."""


class ToolUnavailableError(ChartSentryError):
    """The scanner binary is not on PATH. The tool should be marked skipped."""


class ToolTimeoutError(ChartSentryError):
    """The scanner subprocess exceeded its timeout."""


class AdapterDecodeError(DecodeError):
    """A scanner report could not be parsed; carries the raw output path."""

    def __init__(self, message: str, raw_path: str | None = None):
        super().__init__(message)
        self.raw_path = raw_path


class ProviderError(ChartSentryError):
    """LLM provider failed after exhausting retries."""


class ProviderAuthError(ChartSentryError):
    """LLM provider rejected the configured credentials. Fatal for the run."""


class UndefinedEstimateError(ChartSentryError):
    """A proportion was requested over an empty denominator."""


class DomainError(ChartSentryError):
    """Arguments outside the documented domain (x > n, size > population, ...)."""


class StageError(ChartSentryError):
    """A pipeline stage failed; the run directory stays resumable."""
