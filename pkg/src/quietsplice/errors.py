"""Exception hierarchy shared by every processing stage."""


class ToolkitError(Exception):
    """Base class; ``stage`` is filled in by the pipeline when a stage fails."""

    def __init__(self, message: str = "", stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


# audio
class UnsupportedFormat(ToolkitError):
    pass


class CorruptHeader(ToolkitError):
    pass


class SignalTooShort(ToolkitError):
    pass


class InvalidHop(ToolkitError):
    pass


class InvalidBandRange(ToolkitError):
    pass


class SampleRateMismatch(ToolkitError):
    pass


class LengthMismatch(ToolkitError):
    pass


# suppression
class InvalidDimension(ToolkitError):
    pass


class SingularSystem(ToolkitError):
    pass


class InvalidFilter(ToolkitError):
    pass


# separation / editing backends
class BackendFailure(ToolkitError):
    pass


class ReferenceMismatch(ToolkitError):
    pass


class InvalidSpec(ToolkitError):
    pass


class RegionOutOfBounds(ToolkitError):
    pass


class MissingReplacement(ToolkitError):
    pass


class FadeTooLong(ToolkitError):
    pass


# refinement
class DimensionMismatch(ToolkitError):
    pass


class GeometryMismatch(ToolkitError):
    pass


class EmptyTrainingSet(ToolkitError):
    pass


# analysis
class BoundaryOutOfRange(ToolkitError):
    pass


class ConfigError(ToolkitError):
    pass
