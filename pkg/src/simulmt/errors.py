"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, DataError
exits 2, NumericalError exits 3.
"""


class SimulmtError(Exception):
    """Base class for all package-specific errors."""


class PolicyError(SimulmtError):
    """A read/write schedule was used outside its domain (e.g. no cutoff)."""


class DataError(SimulmtError):
    """Malformed input files, vocabulary mismatches, or bad corpus data."""


class NumericalError(SimulmtError):
    """Training or decoding produced NaN/Inf; carries a diagnostic message."""
