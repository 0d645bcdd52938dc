"""Exception types raised by the cenic toolkit."""


class CenicError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(CenicError):
    pass


class ChannelMismatch(ShapeError):
    pass


class InvalidStride(CenicError):
    pass


class NotDifferentiable(CenicError):
    pass


class ParseError(CenicError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MissingSection(CenicError):
    pass


class TopologyError(CenicError):
    pass


class UnknownPreset(CenicError):
    pass


class DomainError(CenicError):
    pass


class EncodeError(CenicError):
    pass


class DecodeError(CenicError):
    pass


class InputError(CenicError):
    pass


class CorruptStream(DecodeError):
    pass


class ModelMismatch(DecodeError):
    pass


class NotACencStream(DecodeError):
    pass


class VersionError(DecodeError):
    pass


class ReportMismatch(CenicError):
    pass


class DataError(CenicError):
    pass


class ScaleError(CenicError):
    pass


class EmptyReport(CenicError):
    pass
