"""Exception hierarchy.

The CLI maps these onto exit codes: :class:`ConfigError` -> 2,
:class:`DataError` -> 3, :class:`NumericError` -> 4.
"""


class PragmedError(Exception):
    """Base class for all package errors."""


class ConfigError(PragmedError, ValueError):
    """Invalid configuration, parameters or manifest."""


class DataError(PragmedError, ValueError):
    """Malformed or inconsistent input data."""


class ContractError(DataError):
    """An information contract of the pipeline was violated.

    Raised, for instance, when labeled data is handed to a step that must
    never see outcome labels.
    """


class NumericError(PragmedError, ArithmeticError):
    """Non-finite values or failed numerical routines."""
