"""Exception hierarchy shared by every conflayers module."""


class ConfLayersError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(ConfLayersError, ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ConfLayersError, ValueError):
    """A configuration is inconsistent or cannot be satisfied."""


class CapacityError(ConfLayersError):
    """A backend was asked to go past its sequence capacity."""


class StateError(ConfLayersError, RuntimeError):
    """An operation was called in a state that does not allow it."""


class UndefinedMetricError(ConfLayersError, ZeroDivisionError):
    """A metric was requested with an empty denominator."""


class TraceParseError(ConfLayersError, ValueError):
    """A trace file is malformed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line
