"""Exception hierarchy shared by every module."""


class SadaError(Exception):
    """Base class for all errors raised by this package."""


class NotEnoughHistoryError(SadaError):
    """A history buffer holds fewer entries than the operation needs."""


class DimensionError(SadaError, ValueError):
    """Vector or token-map shapes do not agree."""


class NonUniformGridError(SadaError, ValueError):
    """Timestep spacing varies more than the uniform-grid tolerance."""


class DegenerateNodesError(SadaError, ValueError):
    """Interpolation nodes are not pairwise distinct."""


class ScheduleDomainError(SadaError, ValueError):
    """Time outside [0, 1] or at a singular schedule boundary."""


class DegenerateDensityError(SadaError, FloatingPointError):
    """All mixture responsibilities underflowed."""


class CacheStateError(SadaError):
    """Token cache used before it was initialised, or cache shape mismatch."""


class DegenerateNormError(SadaError, ZeroDivisionError):
    """A norm in a relative test is zero."""


class InsufficientSamplesError(SadaError, ValueError):
    """Monte-Carlo check requested with too few samples."""


class ConfigValidationError(SadaError, ValueError):
    """Run configuration failed validation; ``violations`` lists every problem."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))
