"""Exception types raised by lcsem."""


class LcsemError(Exception):
    """Base class for all package errors."""


class InvalidSampleError(LcsemError, ValueError):
    """Sample is unsorted, has nonpositive weights or an empty support."""


class InconsistentInputsError(LcsemError, ValueError):
    """A fit and a sample do not describe the same problem."""


class ZeroDensityError(LcsemError, ArithmeticError):
    """Some observation has zero density under every mixture component."""


class DegenerateWeightsError(LcsemError, ValueError):
    """All responsibilities of a component fall below the weight floor."""


class DegenerateDataError(LcsemError, ValueError):
    """Data carry no spread (for example all points are equal)."""


class ComponentCollapseError(LcsemError, RuntimeError):
    """A mixture weight dropped below the configured floor during SEM.

    The partial trace is attached as ``trace`` so callers can report it.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
