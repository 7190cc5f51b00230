"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Input width or tensor shape does not match what a component expects."""


class StateError(RuntimeError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class NumericError(FloatingPointError):
    """Non-finite value where a finite one is required."""


class DomainError(ValueError):
    """Argument outside its mathematical domain (e.g. nonpositive sigma)."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""
