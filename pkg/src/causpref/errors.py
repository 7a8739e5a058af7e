"""Exception types shared across the package.

The CLI maps :class:`DataError` to exit status 2 and :class:`NumericalError`
to exit status 3.
"""


class DataError(ValueError):
    """Input files, ids, schemas or split requests that cannot be honoured."""


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""
