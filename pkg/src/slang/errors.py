"""Exception hierarchy shared by all modules."""


class SlangError(Exception):
    """Base class for every error raised by this package."""


class NumericError(SlangError, ArithmeticError):
    """A factorization or solve failed, usually because of NaN/inf or a non-PD matrix."""


class DivergenceError(NumericError):
    """The optimizer produced a non-finite mean."""


class ConfigError(SlangError, ValueError):
    """Invalid configuration, shape mismatch, or a guard (e.g. dense size) was violated."""


class ParseError(SlangError, ValueError):
    """Malformed input file. ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class UnsupportedLabelError(ParseError):
    """Classification labels that cannot be mapped to {0, 1}."""
