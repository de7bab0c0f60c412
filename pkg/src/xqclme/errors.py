"""Exception hierarchy shared by all modules."""


class XqcError(Exception):
    """Base class for all package errors."""


class InvalidGeometryError(XqcError, ValueError):
    pass


class DegenerateConfigurationError(XqcError):
    """An interaction collapsed below the admissible length floor."""

    def __init__(self, message, interactions=None):
        super().__init__(message)
        self.interactions = interactions


class NonConvergenceError(XqcError):
    """Newton iterations exhausted without reaching the residual tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class LambdaNonConvergenceError(NonConvergenceError):
    """The LME Lagrange multiplier did not converge at some evaluation points."""

    def __init__(self, message, residual=float("nan"), iterations=0, points=None):
        super().__init__(message, residual, iterations)
        self.points = points


class DerivativeUnavailableError(XqcError):
    pass


class EnrichmentDegeneracyError(XqcError):
    pass


class AssemblyError(XqcError):
    def __init__(self, message, atom=None):
        super().__init__(message)
        self.atom = atom


class ConditioningError(XqcError):
    def __init__(self, message, condition=float("nan")):
        super().__init__(message)
        self.condition = condition


class StaleStateError(XqcError):
    pass


class UndefinedMetricError(XqcError, ValueError):
    pass


class ConfigError(XqcError, ValueError):
    pass
