"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4. Precondition violations on individual function
arguments (bad phi, non-increasing cutpoints, ...) raise plain ValueError.
"""


class OrdmiError(Exception):
    """Base class for package errors."""


class ConfigError(OrdmiError):
    """Invalid or inconsistent configuration input."""


class DataError(OrdmiError):
    """Dataset violates the interchange contract."""


class SchemaError(DataError):
    """Malformed CSV: bad header, unparseable field, inconsistent cluster rows."""


class EmptyDatasetError(DataError):
    """No usable observations remain."""


class TooFewClustersError(DataError):
    """Fewer usable clusters than the operation requires."""


class DegenerateRanksError(DataError):
    """Rank correlation undefined: one of the rank vectors is constant."""


class IdentifiabilityError(DataError):
    """Model parameters are not identified by the observed data."""


class NumericalError(OrdmiError):
    """Numerical breakdown at runtime."""


class SeparationError(NumericalError):
    """Singular or near-singular scoring matrix (condition number gate)."""


class CalibrationError(NumericalError):
    """Intercept calibration could not bracket the target rate."""


class ChainError(NumericalError):
    """An MCMC chain aborted; message carries sweep-level diagnostics."""
