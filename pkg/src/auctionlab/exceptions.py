"""Exception hierarchy shared by the simulation and analysis code."""


class AuctionLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AuctionLabError, ValueError):
    """A parameter or configuration value is invalid."""


class DomainError(AuctionLabError, ValueError):
    """An input value lies outside the domain an operation accepts."""


class InvariantViolation(AuctionLabError, RuntimeError):
    """Internal state broke an invariant (non-finite Q values, etc.)."""


class RankDeficiencyError(AuctionLabError, ValueError):
    """The regressor matrix is not of full column rank.

    ``columns`` lists the names of the columns found to be collinear with
    the others.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)
