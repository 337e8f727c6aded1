"""Exception types shared across the package.

Invalid arguments to library functions raise plain ``ValueError``. The
classes here distinguish failure modes that the command-line layer maps
to exit codes (config -> 2, data -> 3, numerical -> 4).
"""


class ConfigError(Exception):
    """Configuration file or option is malformed or out of range."""


class DataError(Exception):
    """Input data is missing, unreadable, or inconsistent."""


class NumericalError(Exception):
    """A numerical procedure failed to produce a usable result."""
