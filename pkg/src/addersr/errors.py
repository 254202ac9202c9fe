"""Exception types shared across the package."""


class AdderSRError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(AdderSRError, ValueError):
    pass


class ParameterError(AdderSRError, ValueError):
    pass


class SizeError(ParameterError):
    pass


class ConfigurationError(AdderSRError, ValueError):
    pass


class TapeStateError(AdderSRError, RuntimeError):
    pass


class NumericalError(AdderSRError, ArithmeticError):
    """Non-finite values detected; ``layer`` names the first offender."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class FormatError(AdderSRError, ValueError):
    """Malformed file content; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
