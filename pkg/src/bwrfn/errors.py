"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: usage errors -> 1, data/format errors -> 2,
numeric aborts -> 3.
"""


class BwrfnError(Exception):
    """Base class for all package errors."""


class ShapeError(BwrfnError):
    """Operand shapes are incompatible and not resolvable by broadcasting."""


class DomainError(BwrfnError):
    """Mathematically invalid request, e.g. a reduction over an empty extent."""


class UsageError(BwrfnError):
    """API misuse, e.g. backward() on an untraced tensor."""


class ConfigError(BwrfnError):
    """Invalid configuration value."""


class DataError(BwrfnError):
    """Invalid data contents, e.g. a label out of range or a bad manifest."""


class FormatError(BwrfnError):
    """Malformed file contents (WAV, cache, checkpoint, trial list)."""


class MetricError(BwrfnError):
    """Metric undefined for the given inputs, e.g. a single-class trial set."""


class NumericError(BwrfnError):
    """Non-finite values encountered where finite values are required."""
