"""Exception hierarchy shared by all modules."""


class ShootingError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(ShootingError):
    """Problem, structure or formulation data are inconsistent."""


class LegendreClebschViolation(ShootingError):
    """The singular-control coefficient matrix cannot be inverted."""


class IntegrationDiverged(ShootingError):
    """The state or costate became non-finite during integration."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NotSquare(ShootingError):
    """The reduced shooting system has a row/unknown mismatch."""

    def __init__(self, message, surplus=0, blocks=()):
        super().__init__(message)
        self.surplus = surplus
        self.blocks = tuple(blocks)


class JacobianRankDeficient(ShootingError):
    """Normal-equations matrix too ill-conditioned for a Gauss-Newton step."""


class JacobianSingular(ShootingError):
    """Square Jacobian too ill-conditioned for a Newton step."""


class Diverged(ShootingError):
    """The residual became non-finite during the iteration."""
