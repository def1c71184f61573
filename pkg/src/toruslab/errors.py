"""Exception types shared across the toruslab modules."""


class TorusLabError(Exception):
    """Base class for all toruslab errors."""


class NonZeroMean(TorusLabError):
    """Operator requiring zero-mean input got a field with a significant mean."""


class WrongDimension(TorusLabError):
    """Operation restricted to a particular torus dimension."""


class CflViolation(TorusLabError):
    """Time step too large for the current velocity and grid spacing."""


class NonInvertible(TorusLabError):
    """Map Jacobian too degenerate for inversion."""


class NoConvergence(TorusLabError):
    """Iterative procedure exhausted its budget without meeting tolerance."""


class TooFewCheckpoints(TorusLabError):
    """Trajectory has too few checkpoints for the requested time quadrature."""


class NotAxisymmetric(TorusLabError):
    """Field depends on the symmetry-axis coordinate."""


class NonZeroSwirl(TorusLabError):
    """Axisymmetric field has a nonzero component along the symmetry axis."""


class NotSymplecticField(TorusLabError):
    """Field is not symplectic-exact up to its harmonic part."""


class ResolutionTooHigh(TorusLabError):
    """Grid resolution exceeds the guard for this problem family."""


class ZeroField(TorusLabError):
    """Operation undefined on the zero field."""


class NotConverged(TorusLabError):
    """Requested a post-processing step on a solve that did not converge."""


class ConfigError(TorusLabError):
    """Experiment configuration failed validation."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
