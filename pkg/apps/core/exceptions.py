"""
Error families shared by every pipeline app.

Each family has a stable kebab-case name and a process exit code; the
management commands turn them into ``CommandError`` with that code.
"""


class PipelineError(Exception):
    """Base class for pipeline failures"""

    family = 'pipeline-error'
    exit_code = 1

    def with_context(self, prefix):
        """Return a copy of this error with ``prefix`` prepended to the message"""
        error = self.__class__(f"{prefix}: {self}")
        error.__cause__ = self
        return error


class InvalidInputError(PipelineError, ValueError):
    family = 'invalid-input'
    exit_code = 2


class InvalidConfigError(PipelineError, ValueError):
    family = 'invalid-config'
    exit_code = 3


class MalformedNameError(PipelineError, ValueError):
    family = 'malformed-name'
    exit_code = 4


class FrameMismatchError(PipelineError, ValueError):
    family = 'frame-mismatch'
    exit_code = 5


class MixedParentError(PipelineError, ValueError):
    family = 'mixed-parent'
    exit_code = 6


class UnreadableImageError(PipelineError, OSError):
    family = 'unreadable-image'
    exit_code = 7


class MissingGsdError(PipelineError, ValueError):
    family = 'missing-gsd'
    exit_code = 8


class UnwritableOutputError(PipelineError, OSError):
    family = 'unwritable-output'
    exit_code = 9


class DetectorProcessError(PipelineError, RuntimeError):
    family = 'process-failure'
    exit_code = 10


class DetectionParseError(PipelineError, ValueError):
    family = 'parse-error'
    exit_code = 11


class UnknownCutoutError(PipelineError, KeyError):
    family = 'unknown-cutout'
    exit_code = 12

    def __str__(self):
        # KeyError would repr() the message
        return str(self.args[0]) if self.args else ''


class UpsampleRequiredError(PipelineError, ValueError):
    family = 'upsample-required'
    exit_code = 13


class InfeasibleSceneError(PipelineError, ValueError):
    family = 'infeasible-density'
    exit_code = 14


class EmptyCurveError(PipelineError, ValueError):
    family = 'empty-curve'
    exit_code = 15


class NoClassesError(PipelineError, ValueError):
    family = 'no-classes'
    exit_code = 16


class MixedClassError(PipelineError, ValueError):
    family = 'mixed-class'
    exit_code = 17


class BandCountError(PipelineError, ValueError):
    family = 'band-count'
    exit_code = 18


class ImageTooSmallError(PipelineError, ValueError):
    family = 'too-small-image'
    exit_code = 19


class NonSquareChipError(PipelineError, ValueError):
    family = 'non-square-chip'
    exit_code = 20


class OddWindowError(PipelineError, ValueError):
    family = 'odd-window'
    exit_code = 21


class NonPositiveTimeError(PipelineError, ValueError):
    family = 'nonpositive-time'
    exit_code = 22
