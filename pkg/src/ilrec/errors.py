"""Exception types mapped to CLI exit codes (see cli.main)."""


class IlrecError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(IlrecError):
    """Malformed text input (carries line numbers where applicable)."""


class FormatError(IlrecError):
    """Binary container violation (bad magic, truncation, shape mismatch)."""


class ConfigError(IlrecError):
    """Invalid configuration or missing required input."""


class NumericError(IlrecError):
    """Non-finite value where a finite one is required."""
