"""Exception hierarchy shared by every audit module."""

from __future__ import annotations


class AuditError(Exception):
    """Base class for all errors raised by fairaudit."""


# regression / glm
class DimensionMismatch(AuditError, ValueError):
    pass


class RankDeficient(AuditError, ValueError):
    pass


class LeverageAtOne(AuditError, ValueError):
    pass


class ZeroClassicalVariance(AuditError, ZeroDivisionError):
    pass


class SingularInformation(AuditError, ValueError):
    pass


class InvalidResponseForFamily(AuditError, ValueError):
    pass


class NotConverged(AuditError, RuntimeError):
    """IRLS hit its iteration cap; ``last_fit`` holds the final iterate."""

    def __init__(self, message: str, last_fit=None):
        super().__init__(message)
        self.last_fit = last_fit


class NonPSDCovariance(AuditError, ValueError):
    pass


# shift test
class NegativeVarianceBeyondTolerance(AuditError, ArithmeticError):
    pass


class ZeroRestrictedCoefficient(AuditError, ZeroDivisionError):
    pass


# tost-cdp
class InsufficientObservations(AuditError, ValueError):
    pass


class NonpositiveResponseForLog(AuditError, ValueError):
    pass


# power planner
class EffectAtThreshold(AuditError, ValueError):
    pass


# protocol / config
class ConfigError(AuditError, ValueError):
    pass


class MissingField(ConfigError):
    pass


class InvalidRange(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


# data ingestion
class DataError(AuditError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, row: int, col: str, message: str):
        super().__init__(f"row {row}, column {col!r}: {message}")
        self.row = row
        self.col = col


class MissingColumn(DataError):
    pass


UnknownColumn = MissingColumn


class NonBinaryProtected(ParseError):
    pass


class NonpositiveResponse(ParseError):
    pass


# synthetic lab
class NonemptyGridRequired(AuditError, ValueError):
    pass
