"""Exception types shared by all switchopt modules."""


class SwitchOptError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SwitchOptError):
    """Array shapes or time grids of related objects do not match."""


class CapacityError(SwitchOptError):
    """An enumeration limit (mode count, oracle grid size) was exceeded."""


class RepresentationError(SwitchOptError):
    """A control value cannot be expressed in the requested representation."""


class InfeasibleError(SwitchOptError):
    """The combinatorial constraint set admits no solution for this request."""


class DivergenceError(SwitchOptError):
    """State integration produced a non-finite value."""

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class ConfigurationError(SwitchOptError):
    """A problem or run configuration is invalid."""
