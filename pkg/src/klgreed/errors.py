"""Exception types shared across the package."""


class KlGreedError(Exception):
    """Base class for library errors."""


class TemperatureDomainError(KlGreedError, ValueError):
    """A soft quantity was requested with tau <= 0."""


class KlUndefinedError(KlGreedError, ValueError):
    """The first distribution puts mass where the second has none."""


class RenyiUndefinedError(KlGreedError, ValueError):
    pass


class KappaDomainError(KlGreedError, ValueError):
    pass


class LogOfZeroError(KlGreedError, ValueError):
    pass


class IntegrationError(KlGreedError, RuntimeError):
    """Quadrature mass deviates from one by more than the allowed slack."""


class EvaluationDivergedError(KlGreedError, RuntimeError):
    pass


class ActionOutOfRangeError(KlGreedError, ValueError):
    pass


class NotDifferentiableError(KlGreedError, TypeError):
    pass


class DegenerateWeightsError(KlGreedError, FloatingPointError):
    pass


class NanGradientError(KlGreedError, FloatingPointError):
    pass


class CounterexampleNotFoundError(KlGreedError, RuntimeError):
    pass


class ConfigError(KlGreedError, ValueError):
    pass
