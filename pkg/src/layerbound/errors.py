"""Exception types raised across the package."""


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class LossOfAccuracyError(ArithmeticError):
    """A recurrence or series would need more steps than allowed."""


class QuadratureError(ArithmeticError):
    """Adaptive integration failed to converge."""


class UnstableSystemError(ArithmeticError):
    """No admissible theta makes the per-slot kernel V(theta) < 1."""


class CapActiveError(ValueError):
    """The frame-size cap binds, so the linear deadline relation does not hold."""


class InfeasibleError(RuntimeError):
    """Every candidate configuration is unstable or delivers nothing."""


class ConfigError(ValueError):
    """Invalid scenario or simulation configuration."""
