"""Exception hierarchy shared by every module."""


class CLSelectError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(CLSelectError, ValueError):
    """A model parameter or configuration value lies outside its admissible range."""


class NumericalDomainError(CLSelectError, ArithmeticError):
    """A probability or intermediate quantity underflowed or became non-finite."""


class DegenerateMaskError(CLSelectError, ValueError):
    """Estimation was requested on the all-zero component mask."""


class NonConvergenceError(CLSelectError, RuntimeError):
    """Newton iteration failed to reach the score tolerance.

    The last iterate is kept on ``last_iterate`` so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SingularMatrixError(CLSelectError, ArithmeticError):
    """A sensitivity or scatter matrix could not be inverted."""


class DegenerateStateError(CLSelectError, RuntimeError):
    """Both candidate states of a Gibbs coordinate update have infinite objective."""


class NoValidStateError(CLSelectError, RuntimeError):
    """A chain trace holds no state with a finite objective."""


class DiagnosticUnavailable(CLSelectError):
    """Too few finite objective values to form a control limit."""
