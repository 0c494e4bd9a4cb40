"""Exception types shared across the package."""


class QuasidiffError(Exception):
    """Base class for all package errors."""


class NotElliptic(QuasidiffError):
    """Quadratic form of a coefficient failed positivity at a sample.

    Carries the violating sample as attributes ``t``, ``x``, ``y``, ``xi``
    and the offending value.
    """

    def __init__(self, value, t, x, y, xi):
        self.value = value
        self.t = t
        self.x = x
        self.y = y
        self.xi = xi
        super().__init__(
            f"quadratic form {value:.6g} <= 0 at t={t:.6g}, x={x}, y={y:.6g}, xi={xi}"
        )


class RangeEscape(QuasidiffError):
    """A state field left the admissible interval of the nonlinearity."""


class MaxPrincipleViolation(QuasidiffError):
    """Discrete solution exceeded the sup bound of its initial datum."""


class ContractionFailure(QuasidiffError):
    """Fixed-point iteration left the ball or stopped contracting.

    The caller should retry on a shorter time window.
    """

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class SolverFailure(QuasidiffError):
    """An inner linear solve did not reach its tolerance."""


class ConfigError(QuasidiffError):
    """Experiment configuration failed validation.

    ``path`` locates the offending field, dotted, e.g. ``fixed_point.q``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
