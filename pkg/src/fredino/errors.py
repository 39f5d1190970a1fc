"""Exception hierarchy shared across the package."""


class FredinoError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(FredinoError, ValueError):
    pass


class NonFiniteValue(FredinoError, FloatingPointError):
    pass


class DivergedForward(NonFiniteValue):
    """A fixed-point pass blew up, i.e. the assembled operator is not contractive."""


class NotOnTape(FredinoError, RuntimeError):
    pass


class InvalidWidths(FredinoError, ValueError):
    pass


class FormatVersionMismatch(FredinoError, ValueError):
    pass


class InvalidRange(FredinoError, ValueError):
    pass


class DimensionTooLarge(FredinoError, ValueError):
    pass


class KappaOutOfRange(FredinoError, ValueError):
    pass


class SingularSystem(FredinoError, ArithmeticError):
    pass


class InsufficientLayers(FredinoError, ValueError):
    pass


class ZeroNorm(FredinoError, ArithmeticError):
    pass


class DegenerateConstantInput(FredinoError, ValueError):
    pass


class UnknownKind(FredinoError, ValueError):
    pass


class EmptySchedule(FredinoError, ValueError):
    pass


class NonPositiveRadius(FredinoError, ValueError):
    pass


class CoincidentPoints(FredinoError, ValueError):
    pass


class ZeroReference(FredinoError, ArithmeticError):
    pass


class EmptyInput(FredinoError, ValueError):
    pass


class ConfigError(FredinoError, ValueError):
    pass


class NotConverged(FredinoError, RuntimeError):
    """Raised by iterative solvers that hit their cap; carries the last iterate."""

    def __init__(self, message, last_iterate=None, report=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.report = report
