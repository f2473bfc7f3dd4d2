"""Exception types raised by the lab."""


class LabError(Exception):
    """Base class for every error raised by anosov_lab."""


class PointOutsideChart(LabError, ValueError):
    pass


class DerivativeUnavailable(LabError):
    """A finite-difference stencil would leave the chart domain."""


class NotNegativelyCurved(LabError):
    pass


class ChartExit(LabError):
    """The geodesic left the chart domain before the requested time.

    The partial segment is attached as ``segment``.
    """

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


class StepSizeUnderflow(LabError):
    pass


class GridMismatch(LabError, ValueError):
    pass


class ConjugatePointOnSegment(LabError):
    """det Z(0) vanished in the Green boundary-value construction."""

    def __init__(self, message, det=None):
        super().__init__(message)
        self.det = det


class NoConvergence(LabError):
    def __init__(self, message, gap=None, T=None):
        super().__init__(message)
        self.gap = gap
        self.T = T


class BlowUp(LabError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class WindowTooShort(LabError, ValueError):
    pass


class SingularY(LabError):
    pass


class SingularInput(LabError, ValueError):
    pass


class SeparationTooLarge(LabError, ValueError):
    pass


class ParseError(LabError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(LabError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
