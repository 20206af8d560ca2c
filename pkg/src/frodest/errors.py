"""Exception hierarchy shared across the package.

The classes mirror the failure taxonomy used by the command line tool:
configuration problems, model problems, and numerical problems map to
distinct process exit codes there.
"""


class FrodestError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FrodestError):
    """Invalid experiment configuration or command-line input."""


class ModelError(FrodestError):
    """Invalid model definition, model file, or dimension mismatch."""


class AssumptionViolationError(ModelError):
    """A structural condition required by the pipeline does not hold.

    Raised, for example, when the sum of the state coefficient matrices
    is numerically singular, which leaves the one-step update undefined.
    """


class NumericError(FrodestError):
    """Numerical failure: singular factorizations, ill-conditioning."""


class GuaranteeUnavailableError(NumericError):
    """Requested performance guarantees cannot be certified.

    Raised when the spectral or window conditions needed by the bound
    computations fail, or when no admissible contraction margin exists.
    """
