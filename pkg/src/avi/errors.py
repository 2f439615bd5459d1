"""Exception hierarchy shared by the library and the command line."""


class AviError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AviError, ValueError):
    """Invalid sizes, options or experiment configuration."""


class ScheduleError(ConfigError):
    """An annealing schedule that cannot produce a valid (rho, T) pair."""


class DataError(AviError, ValueError):
    """Input data that is well formed but semantically invalid."""


class ParseError(DataError):
    """Malformed input file.  ``lineno`` is 1-based."""

    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


class InvariantError(AviError, ArithmeticError):
    """A variational factor left its valid parameter domain."""
