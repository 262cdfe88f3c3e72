"""Exception types raised across the package."""


class VoxfuseError(Exception):
    """Base class for all errors raised by voxfuse."""


class ValidationError(VoxfuseError, ValueError):
    """Inputs are well-formed but violate a precondition."""


class PointBehindCamera(ValidationError):
    pass


class NonPositiveDepth(ValidationError):
    pass


class InvalidPose(ValidationError):
    pass


class SpecMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ChannelMismatch(ValidationError):
    pass


class EmptyEvaluation(ValidationError):
    pass


class InsufficientSamples(ValidationError):
    pass


class DegenerateFit(ValidationError):
    pass


class FormatError(VoxfuseError):
    """A file or byte buffer could not be decoded.

    ``offset`` is a byte offset for binary formats; ``line``/``field`` locate
    the problem in text formats.
    """

    def __init__(self, message, *, offset=None, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        if offset is not None:
            where.append(f"byte {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.line = line
        self.field = field


class TruncatedFile(FormatError):
    pass


class SizeMismatch(FormatError, SpecMismatch):
    pass


class ParseError(FormatError):
    pass


class UnknownRawLabel(FormatError):
    pass
