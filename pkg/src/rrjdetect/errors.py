"""Exception hierarchy.

The CLI maps :class:`ConfigError` to exit code 1 and :class:`NumericalError`
to exit code 2.
"""


class RRJError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(RRJError, ValueError):
    """Invalid topology, scenario file or parameter."""


class NumericalError(RRJError, ArithmeticError):
    """A computation could not be carried out reliably."""


class NumericalBreakdown(NumericalError):
    """A closed-form evaluation left its admissible range."""


class NonErgodicError(NumericalError):
    """The chain has transient or disconnected states."""


class SpectralError(NumericalError):
    """Eigen-decomposition unusable (repeated eigenvalues)."""


class SingularTestError(NumericalError):
    """The two hypotheses have different supports; Gaussian moments do not apply."""


class InfeasibleError(NumericalError):
    """The efficiency constraint cannot be met anywhere in the unit box."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}
