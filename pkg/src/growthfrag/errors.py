"""Exception types shared across the package."""


class GrowthFragError(Exception):
    """Base class for all package errors."""


class ModelValidationError(GrowthFragError, ValueError):
    """A Lévy triplet violates the structural requirements of the model."""


class DomainError(GrowthFragError, ValueError):
    """Argument outside the finite domain of an exponent function."""


class PoleProximityError(DomainError):
    """Evaluation requested too close to a pole of the closed-form cumulant."""


class QuadratureError(GrowthFragError, RuntimeError):
    """Adaptive quadrature failed to converge to the requested accuracy."""


class NoNegativeRegionError(GrowthFragError, RuntimeError):
    """The cumulant stays positive on the scan grid: no Malthusian root exists."""


class FlatRootError(GrowthFragError, RuntimeError):
    """|kappa'| at the located root is below tolerance (degenerate crossing)."""


class PathTooShortError(GrowthFragError, RuntimeError):
    """A sampled path ended before the requested functional could be resolved."""


class ValidationFailureError(GrowthFragError, RuntimeError):
    """A constructed object failed its numerical post-validation check."""


class InsufficientSamplesError(GrowthFragError, ValueError):
    """Too few samples for the requested estimator."""


class DegenerateSampleError(GrowthFragError, ValueError):
    """Sample has no variation; estimator undefined."""
