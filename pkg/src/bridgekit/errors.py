"""Exception taxonomy shared across the package."""


class BridgeKitError(Exception):
    """Base class for package-specific failures."""


class ShapeError(BridgeKitError, ValueError):
    """Array arguments disagree on dimensions."""


class DomainError(BridgeKitError, ValueError):
    """A numeric argument lies outside its mathematical domain."""


class DataError(BridgeKitError, ValueError):
    """Input data is malformed or non-finite."""


class ConfigError(BridgeKitError, ValueError):
    """A run configuration violates a documented consistency rule."""


class ConvergenceError(BridgeKitError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    Carries the final constraint violation in ``violation``.
    """

    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


class IntegrationError(BridgeKitError, RuntimeError):
    """A trajectory became non-finite. Carries the failing ``step`` index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DensityUnderflowError(BridgeKitError, RuntimeError):
    """Every mixture component underflowed at the query point."""
