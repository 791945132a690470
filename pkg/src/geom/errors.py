"""Exception hierarchy shared by every module."""


class GeomError(Exception):
    """Base class for all errors raised by the package."""


class ExprSyntaxError(GeomError):
    def __init__(self, position: int, message: str):
        super().__init__(f"at position {position}: {message}")
        self.position = position
        self.message = message


class UnknownIdentifier(GeomError):
    def __init__(self, name: str):
        super().__init__(f"unknown identifier {name!r}")
        self.name = name


class DomainError(GeomError, ValueError):
    """Evaluation left the real domain of an operation (log/sqrt of a negative, x/0, ...)."""


class DegenerateMetric(GeomError):
    pass


class SchemaError(GeomError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class SymmetryError(GeomError):
    pass


class UnknownPreset(GeomError):
    pass


class OutOfChart(GeomError):
    pass


class OutOfInterval(GeomError):
    pass


class BasePointMismatch(GeomError):
    pass


class StepTooLarge(GeomError):
    pass


class MaxSteps(GeomError):
    pass


class SingularFrame(GeomError):
    pass
