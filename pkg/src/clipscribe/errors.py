"""Exception hierarchy shared across the pipeline.

The four category classes map one-to-one onto CLI exit codes: config errors
exit 2, input/parse errors 3, backend errors 4, output I/O errors 5.
"""

from __future__ import annotations


class ClipscribeError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ConfigError(ClipscribeError):
    exit_code = 2


class InputError(ClipscribeError):
    exit_code = 3


class BackendError(ClipscribeError):
    exit_code = 4


class OutputError(ClipscribeError):
    exit_code = 5


class StageError(ClipscribeError):
    """Wraps a module error with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:  # type: ignore[override]
        if isinstance(self.cause, ClipscribeError):
            return self.cause.exit_code
        return 1


# ingest
class MissingMagic(InputError):
    pass


class MissingParam(InputError):
    pass


class MalformedParam(InputError):
    pass


class UnsupportedChroma(InputError):
    pass


class TruncatedFrame(InputError):
    pass


class BadFrameMarker(InputError):
    pass


class EmptySequence(InputError):
    pass


class MixedDimensions(InputError):
    pass


class UndecodableImage(InputError):
    pass


# keyframes
class EmptyPlane(InputError):
    pass


class BinCountMismatch(InputError):
    pass


class EmptyStream(InputError):
    pass


# captioner
class BackendUnreachable(BackendError):
    pass


class BadResponse(BackendError):
    pass


class ManifestMiss(BackendError):
    pass


class EmptyCaption(BackendError):
    pass


class EmptyLexicon(ConfigError):
    pass


class EmptyCaptionList(InputError):
    pass


# summarizer
class EmptyDocument(InputError):
    pass


# metrics
class EmptyCandidate(InputError):
    pass


class EmptyReferences(InputError):
    pass


class CorpusTooSmall(InputError):
    pass


# report persistence
class IoFailure(OutputError):
    pass
