"""Exception hierarchy shared by all asrattrib modules."""


class AttribError(Exception):
    """Base class for every error raised by this package."""


class UnsupportedFormat(AttribError):
    pass


class UnsupportedSampleRate(AttribError):
    pass


class EmptyAudio(AttribError):
    pass


class TooShort(AttribError):
    pass


class DimensionMismatch(AttribError):
    pass


class ParseError(AttribError):
    pass


class LengthMismatch(AttribError):
    pass


class InvalidLabel(AttribError):
    pass


class UnsupportedLayer(AttribError):
    pass


class EmptyInput(AttribError):
    pass


class TooManyFeatures(AttribError):
    pass


class IndexOutOfRange(AttribError):
    pass


class ShapeMismatch(AttribError):
    pass


class NonPositiveClip(AttribError):
    pass


class LabelLengthMismatch(AttribError):
    pass
