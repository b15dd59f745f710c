"""Exception types shared across the package."""

from __future__ import annotations


class StageBenchError(Exception):
    """Base class for all package-specific errors."""


class TransportError(StageBenchError):
    """Backend unreachable or the wire exchange failed."""


class KeyNotFoundError(StageBenchError):
    """Requested key is absent. A normal outcome, not a failure."""


class NotInitializedError(StageBenchError):
    """Backend storage root does not exist or was never prepared."""


class ServerStartupError(StageBenchError):
    """Staging server could not be started (port occupied, bad root, ...)."""


class WorkflowValidationError(StageBenchError):
    """Workflow graph is not runnable (cycle, unknown dependency)."""


class StallError(StageBenchError):
    """A blocking reader waited past its deadline for producer data."""


class TornPayloadError(StageBenchError):
    """A staged payload failed its embedded checksum."""


class NoEventsError(StageBenchError):
    """Aggregation found no parseable event records."""
