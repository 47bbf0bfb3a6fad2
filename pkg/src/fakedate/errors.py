"""Exception hierarchy shared by every module of the harness."""


class FakeDateError(Exception):
    """Base class for all harness errors."""


# promptkit
class InvalidComponents(FakeDateError, ValueError):
    pass


class MissingTemplate(FakeDateError, KeyError):
    pass


class FakeBeforeReal(FakeDateError, ValueError):
    pass


class PromptParseError(FakeDateError, ValueError):
    """A prompt text does not follow the shipped template layout."""


# dataio
class ParseError(FakeDateError, ValueError):
    pass


class DuplicatePeriod(ParseError):
    pass


class UnsortedSeries(ParseError):
    pass


class EmptySeries(FakeDateError, ValueError):
    pass


class NoDataAvailable(FakeDateError, LookupError):
    pass


class OffGrid(FakeDateError, ValueError):
    pass


# modelgate
class GateError(FakeDateError):
    pass


class Transport(GateError):
    pass


class AuthError(GateError):
    pass


class RateLimited(GateError):
    pass


class ReplayMiss(GateError, KeyError):
    pass


class BatchError(GateError):
    """Some requests of a batch failed.

    ``results`` holds the texts that did arrive (``None`` for failures) and
    ``failed`` maps each failing sample index to its exception.
    """

    def __init__(self, message, results, failed):
        super().__init__(message)
        self.results = results
        self.failed = failed


# stats
class EmptySample(FakeDateError, ValueError):
    pass


class EmptyList(FakeDateError, ValueError):
    pass


# testkit
class CellError(FakeDateError):
    """A (date, variable) cell of a protocol run failed."""

    def __init__(self, date, variable, cause):
        super().__init__(f"cell {date.isoformat()} / {variable.value} failed: {cause}")
        self.date = date
        self.variable = variable
        self.cause = cause


class InsufficientRows(FakeDateError, ValueError):
    pass


# reportcli
class EmptyGrid(FakeDateError, ValueError):
    pass
