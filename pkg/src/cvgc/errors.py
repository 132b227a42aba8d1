"""Exception types raised by the library.

Every error derives from :class:`CvgcError`; argument errors additionally
derive from :class:`ValueError` so callers can catch them the usual way.
"""


class CvgcError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(CvgcError, ValueError):
    pass


class EmptyInputError(CvgcError, ValueError):
    pass


class MissingLabelsError(CvgcError, ValueError):
    pass


class MissingFeaturesError(CvgcError, ValueError):
    pass


class InvalidLabelError(CvgcError, ValueError):
    pass


class DegenerateGeometryError(CvgcError, ArithmeticError):
    """Neighborhood is collinear or coincident; no plane normal exists."""


class NoGroundPointsError(CvgcError, LookupError):
    pass


class CoincidentViewpointError(CvgcError, ValueError):
    pass


class EmptyOutputError(CvgcError):
    pass


class DomainViolationError(CvgcError, ValueError):
    pass


class DivergenceError(CvgcError, ArithmeticError):
    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class NoScoredPointsError(CvgcError, ValueError):
    pass


class ParseError(CvgcError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(CvgcError, ValueError):
    pass
