"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` so the command line can map failures to
the documented process exit status without a lookup table.
"""

from __future__ import annotations


class TwmiqpError(Exception):
    exit_code = 1


class InputError(TwmiqpError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class DimensionMismatch(InputError):
    pass


class ComplementarityViolation(InputError):
    pass


class AsymmetricInput(InputError):
    pass


class InvalidDecomposition(InputError):
    pass


class IngestError(InputError):
    pass


class NumericalError(TwmiqpError, ArithmeticError):
    exit_code = 3


class NotPositiveDefinite(NumericalError):
    pass


class AllFlagged(NumericalError):
    pass


class AllConfigsDiscarded(NumericalError):
    pass


class ResourceLimit(TwmiqpError):
    exit_code = 4


class PieceLimitExceeded(ResourceLimit):
    pass


class TooManyIndicators(ResourceLimit):
    pass
