"""Exception hierarchy shared across the package.

CLI exit codes map onto these classes: ParameterError -> 1, DataError -> 2,
VerificationError -> 3, NumericError and ConsistencyError -> 4.
"""


class GswError(Exception):
    """Base class for all package errors."""


class ParameterError(GswError):
    """A configuration value is outside its legal range."""


class DataError(GswError):
    """Input data is malformed, inconsistent, or non-finite."""


class LogicError(GswError):
    """An operation was called in a state its contract forbids."""


class NumericError(GswError):
    """A numerical routine failed (singular system, unstable denominator)."""


class ConsistencyError(GswError):
    """An internal invariant that should hold by construction was violated.

    Raised by the coupled process when an identity guaranteed on the good
    event fails; indicates an implementation bug, not bad input.
    """


class VerificationError(GswError):
    """A verification suite check failed."""
