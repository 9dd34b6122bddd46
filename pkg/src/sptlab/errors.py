"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: usage errors exit 1, data errors exit 2,
numeric/convergence errors exit 3.
"""


class SptlabError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(SptlabError, ValueError):
    """An argument is outside its documented range or shape."""


class DomainError(SptlabError, ValueError):
    """A mathematical domain violation (e.g. non-positive input to a log)."""


class NotLongOnlyError(DomainError):
    """A weight rule produced a materially negative portfolio weight."""


class EvaluationError(SptlabError, RuntimeError):
    """A user-supplied function returned a non-finite or unusable value."""


class MembershipError(SptlabError, ValueError):
    """A strategy put weight on an asset outside the day's universe."""

    def __init__(self, date, asset):
        super().__init__(f"weight on non-member asset {asset!r} on {date!r}")
        self.date = date
        self.asset = asset


class UndefinedSharpeError(SptlabError, ArithmeticError):
    """Sharpe ratio requested for a return series with zero variance."""


class NoFeasiblePointError(SptlabError, RuntimeError):
    """Every candidate in a search failed to evaluate."""


class InitializationError(SptlabError, RuntimeError):
    """A sampler could not start (e.g. -inf likelihood at the initial state)."""


class NumericError(SptlabError, ArithmeticError):
    """Non-finite values appeared where finite numbers are required."""


class ResourceError(SptlabError, RuntimeError):
    """A requested computation exceeds the configured resource budget."""


class DataError(SptlabError, ValueError):
    """Input data failed to parse or validate."""


class LookAheadError(DataError):
    """A data join would leak future information into the past."""


def exit_code_for(err: BaseException) -> int:
    """Process exit code for an error: 1 usage, 2 data, 3 numeric."""
    if isinstance(err, (InvalidArgumentError, ResourceError)):
        return 1
    if isinstance(err, (DataError, MembershipError)):
        return 2
    if isinstance(err, SptlabError):
        return 3
    return 3
