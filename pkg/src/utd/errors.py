"""Exception taxonomy shared across the toolkit.

Every domain failure derives from UtdError so the CLI can map it to a
single nonzero exit code; OS-level errors propagate as OSError.
"""
from __future__ import annotations


class UtdError(Exception):
    """Base class for all domain errors raised by this package."""


class ParseError(UtdError):
    """Input file is not syntactically valid for its expected format."""


class SchemaError(UtdError):
    """Input parses but violates a structural constraint.

    `key` names the offending record where one can be identified.
    """

    def __init__(self, message: str, key: object = None):
        super().__init__(message if key is None else f"{message} (key={key!r})")
        self.key = key


class UnknownVideo(SchemaError):
    """A record references a video id absent from the manifest."""


class UnknownClass(SchemaError):
    """A prediction names a class index outside the manifest's label set."""


class MissingEntry(UtdError):
    """A required (video, frame, concept) description entry is absent."""


class MissingEmbedding(UtdError):
    """A required embedding is absent from the cache and no endpoint is available."""


class MissingSample(UtdError):
    """A prediction file does not cover a required test sample."""


class PreconditionError(UtdError):
    """An operation was invoked outside its stated contract."""


class EmptyTestSet(PreconditionError):
    """The manifest has no test samples to evaluate."""


class EmptyResults(PreconditionError):
    """A metric was requested over an empty result list."""


class EndpointError(UtdError):
    """An inference endpoint failed after all retries."""


class ImageError(UtdError):
    """A frame path could not be read as image content."""


class DimensionMismatch(UtdError):
    """Vector dimensions disagree with each other or with a store header."""


class ZeroNorm(UtdError):
    """A vector with (near-)zero L2 norm reached a normalization or cosine."""


class DegenerateInput(UtdError):
    """Training data contains non-finite values or is otherwise unusable."""


class TrainFailure(UtdError):
    """A panel member could not be trained."""


class InfeasibleQuota(UtdError):
    """Per-class removal quotas cannot be satisfied (should be unreachable)."""
