"""Exception types raised across the package.

Every error derives from :class:`CfPanelError` so callers can catch the whole
family at once; most also subclass :class:`ValueError` because they signal bad
input rather than a bug.
"""

from __future__ import annotations


class CfPanelError(Exception):
    """Base class for all package errors."""


# panel construction / windowing
class LengthMismatch(CfPanelError, ValueError):
    pass


class BadT0(CfPanelError, ValueError):
    pass


class NoTreated(CfPanelError, ValueError):
    pass


class NoControl(CfPanelError, ValueError):
    pass


class TooShort(CfPanelError, ValueError):
    pass


class TooShortInsample(TooShort):
    pass


class UnknownUnit(CfPanelError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


# numerics
class NotSquare(CfPanelError, ValueError):
    pass


class NotSymmetric(CfPanelError, ValueError):
    pass


class FactorizationFailed(CfPanelError, ArithmeticError):
    pass


class Singular(CfPanelError, ArithmeticError):
    pass


class NonFiniteObjective(CfPanelError, ArithmeticError):
    pass


class BadTau(CfPanelError, ValueError):
    pass


class UnsortedTaus(CfPanelError, ValueError):
    pass


# simulation / estimation
class DegenerateSigma(CfPanelError, ValueError):
    pass


class TooFewDonors(CfPanelError, ValueError):
    pass


class NoValidModel(CfPanelError, ArithmeticError):
    pass


class UnknownModel(CfPanelError, ValueError):
    pass


# evaluation
class ZeroDenominator(CfPanelError, ZeroDivisionError):
    pass


class MissingForecast(CfPanelError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class EmptyGroup(CfPanelError, ValueError):
    pass


# file formats
class MissingColumn(CfPanelError, ValueError):
    pass


class DuplicateKey(CfPanelError, ValueError):
    pass


class GapInPeriods(CfPanelError, ValueError):
    pass


class UnparseableValue(CfPanelError, ValueError):
    pass


class CoverageGap(CfPanelError, ValueError):
    pass


# remote fetch
class HttpError(CfPanelError, OSError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class AuthError(HttpError):
    pass


class SchemaDrift(CfPanelError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset
