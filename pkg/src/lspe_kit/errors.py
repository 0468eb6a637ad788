"""Exception hierarchy shared by all lspe_kit modules."""


class LspeError(Exception):
    """Base class for every error raised by lspe_kit."""


class InputError(LspeError, ValueError):
    """Bad shapes, fields, file contents or parameters supplied by the caller."""


class ConfigError(InputError):
    """Malformed experiment configuration.

    ``line`` is the 1-based line number in the config file when known.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class NumericalError(LspeError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


class FactorizationError(NumericalError):
    """Cholesky factorization failed, even after the ridge fallback."""
