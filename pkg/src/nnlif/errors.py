"""Exception types raised by the solvers."""


class NNLIFError(Exception):
    """Base class for all package errors."""


class SideRequired(NNLIFError, ValueError):
    """A derivative was requested exactly at the reset potential without a side."""


class RankDeficient(NNLIFError, ArithmeticError):
    """The mass matrix is numerically rank deficient."""


class DenominatorVanishing(NNLIFError, ArithmeticError):
    """1 + a1*lambda3 dropped below the guard; the firing rate diverges."""


class SingularStepMatrix(NNLIFError, ArithmeticError):
    """The linear system of a time step could not be solved."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class UnstableStep(NNLIFError, ArithmeticError):
    """The finite-difference density exceeded its sanity bound."""


class MismatchedRuns(NNLIFError, ValueError):
    """Two runs being compared do not share parameters or final time."""


class NonConvergence(NNLIFError, ArithmeticError):
    """The eigenvalue solver failed to converge."""


class NoRootFound(NNLIFError, ValueError):
    """No sign change of the normalization defect in the scan range."""


class DegenerateSteadyState(NNLIFError, ValueError):
    """The steady profile is not strictly positive on the quadrature nodes."""


class ConfigError(NNLIFError, ValueError):
    """Invalid experiment configuration; ``path`` locates the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
