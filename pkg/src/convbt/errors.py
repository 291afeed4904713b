"""Exception hierarchy.

``DataError`` maps to CLI exit code 1, ``ConfigError`` to 2 and
``InvariantViolation`` to 3.
"""


class ConvbtError(Exception):
    """Base class for every error raised by this package."""


class DataError(ConvbtError, ValueError):
    pass


class ConfigError(ConvbtError, ValueError):
    pass


class InvariantViolation(ConvbtError, AssertionError):
    pass


class MalformedRow(DataError):
    def __init__(self, row: int, reason: str):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class NonPositivePrice(DataError):
    def __init__(self, ticker: str, date):
        self.ticker = ticker
        self.date = date
        super().__init__(f"non-positive close for {ticker} on {date}")


class DuplicateDate(DataError):
    def __init__(self, ticker: str, date):
        self.ticker = ticker
        self.date = date
        super().__init__(f"duplicate date {date} for {ticker}")


class TargetMissing(DataError):
    pass


class InsufficientOverlap(DataError):
    pass


class PanelInvariantError(DataError):
    pass


class UnknownTicker(DataError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class LengthMismatch(DataError):
    pass


class EmptySeries(DataError):
    pass


class NotEnoughHistory(DataError):
    pass


class ZeroVolatility(DataError, ArithmeticError):
    """Sample standard deviation of the input is zero."""


class BadSpec(ConfigError):
    pass


class BadConfig(ConfigError):
    pass


class IoFailure(DataError, OSError):
    pass
