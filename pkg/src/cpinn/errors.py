"""Exception hierarchy.

Every error raised on purpose by the package derives from ``CpinnError`` and
carries enough structure (layer index, term name, epoch, column) for callers
to report where things went wrong.
"""


class CpinnError(Exception):
    """Base class for all package errors."""


class ShapeError(CpinnError, ValueError):
    pass


class DomainError(CpinnError, ValueError):
    """A point lies outside the closure of a problem domain."""


class NonFiniteError(CpinnError, FloatingPointError):
    """NaN or inf encountered; ``where`` names the layer, term or stage."""

    def __init__(self, message, where=None, epoch=None):
        super().__init__(message)
        self.where = where
        self.epoch = epoch


class UnsupportedPrimitiveError(CpinnError, TypeError):
    def __init__(self, primitive):
        super().__init__(f"primitive {primitive!r} is not supported by the differentiation engine")
        self.primitive = primitive


class ConfigError(CpinnError, ValueError):
    pass


class ParseError(CpinnError, ValueError):
    def __init__(self, message, line=None, field=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.line = line
        self.field = field


class EmptyInputError(CpinnError, ValueError):
    pass
