"""
Collection of exceptions used by the library and the command line tool.
"""
from typing import List, Optional, Sequence


class AppException(Exception):
    """
    Base class for exceptions raised by svnet.
    """
    pass


class UsageException(AppException):
    """
    Unknown subcommand or bad command line flags.
    """
    pass


class ConfigException(AppException):
    """
    Indicates that a configuration value is invalid, e.g. an empty trading session or a
    timescale that does not fit into the session.
    """
    pass


class DataException(AppException):
    """
    Base class for exceptions related to input data.
    """
    pass


class ParseException(DataException):
    """
    A trade record could not be parsed. `line` is the 1-based line number in the source,
    the header being line 1.
    """
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)
        self.line = line


class InsufficientDataException(DataException):
    """
    Raised when there is not enough data to run a computation, e.g. fewer than two
    traders or no groups to link.
    """
    pass


class IncompleteSweepException(DataException):
    """
    Raised when a sweep directory does not contain every expected cell.
    """
    def __init__(self, message: str, missing: Optional[Sequence[str]] = None):
        self.missing: List[str] = list(missing) if missing else []
        if self.missing:
            shown = ', '.join(self.missing[:20])
            more = len(self.missing) - 20
            message += f': {shown}' + (f' (+{more} more)' if more > 0 else '')
        super().__init__(message)


class ValidationException(AppException):
    """
    Statistical preconditions were violated, e.g. inconsistent co-occurrence counts or
    sequences of different lengths.
    """
    pass


class SweepTaskException(AppException):
    """
    A sweep work unit failed. The message identifies the calibration window and the
    timescale pair of the failing unit.
    """
    pass
