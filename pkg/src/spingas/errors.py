"""Exception types shared across the package."""


class SpingasError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SpingasError):
    """Invalid or inconsistent scenario / parameter configuration."""


class CapacityError(SpingasError):
    """A basis or operator would exceed the configured memory budget."""


class ConvergenceError(SpingasError):
    """An iterative routine (propagator, root finder) failed to converge."""


class UndefinedDirectionError(SpingasError):
    """The mean spin is too short to define a measurement direction."""
