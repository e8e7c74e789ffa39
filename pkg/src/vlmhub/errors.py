"""Exception hierarchy for the model-hub engine.

Every error raised by the engine derives from VlmHubError so CLI code can
map engine failures to a validation exit code in one place.
"""

from __future__ import annotations


class VlmHubError(Exception):
    """Base class for all engine errors."""


class InvalidInputError(VlmHubError):
    """A precondition on user-supplied input was violated."""


class DuplicateIdError(VlmHubError):
    """An identifier that must be unique was seen more than once."""

    def __init__(self, message: str, ids: list[str] | None = None):
        super().__init__(message)
        self.ids = list(ids or [])


class UnresolvedReferenceError(VlmHubError):
    """An edge or reference points at an id that does not exist."""

    def __init__(self, message: str, ids: list[str] | None = None):
        super().__init__(message)
        self.ids = list(ids or [])


class DegenerateEmbeddingError(VlmHubError):
    """A vector with (near-)zero norm cannot be unit-normalized."""


class InvalidValueError(VlmHubError):
    """A numeric payload contains NaN or infinity."""


class CorruptionError(VlmHubError):
    """Stored data failed its checksum."""


class FormatError(VlmHubError):
    """A file or directory does not match the expected on-disk layout."""


class IncompleteEmbeddingsError(VlmHubError):
    """An embedding matrix is missing rows for required ids."""

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = list(missing or [])


class IncompleteMetadataError(VlmHubError):
    """Model metadata lacks a field required by the requested operation."""


class StaleLabelError(VlmHubError):
    """A model label was computed against an older graph version."""


class NoCandidatesError(VlmHubError):
    """No graph nodes are eligible for matching."""


class NoModelsError(VlmHubError):
    """The hub holds no registered models."""


class InfeasibleFixtureError(VlmHubError):
    """A synthetic-hub profile cannot be realized in the given dimension."""
