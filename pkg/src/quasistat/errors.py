"""Exception and warning types raised across the package."""


class QuasiStatError(Exception):
    """Base class for all errors raised by quasistat."""


class FormatError(QuasiStatError):
    """A channel container does not follow the CTF1 layout."""


class DataError(QuasiStatError):
    """Sample data is present but unusable (e.g. non-finite values)."""


class InsufficientData(QuasiStatError):
    """The input is too small for the requested operation."""


class ConfigError(QuasiStatError, ValueError):
    """A parameter or configuration value is out of bounds."""


class UndefinedMeasure(QuasiStatError):
    """A measure is undefined for the given input (e.g. all-zero statistics)."""


class NumericalError(QuasiStatError):
    """A numerical invariant (Hermitian symmetry, PSD) was violated."""


class DegenerateBlockWarning(UserWarning):
    """A normalization block carries no co-polarized power and was left unscaled."""


class DegenerateThresholdWarning(UserWarning):
    """The threshold is not exceeded even at zero offset; the LQS time is zero."""
