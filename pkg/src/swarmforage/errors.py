"""Exception and warning types raised across the package."""


class SwarmForageError(Exception):
    """Base class for all package errors."""


class InfeasibleGeometryError(SwarmForageError):
    """Cluster placement could not satisfy the geometric constraints."""


class DegenerateDensityError(SwarmForageError):
    """A block cluster has zero (or negative) density where a density is required."""


class ModelDomainError(SwarmForageError):
    """A formula was evaluated outside the region where it is defined."""


class DegenerateScenarioError(SwarmForageError):
    """The scenario collapses a quantity that must be non-zero (e.g. a distance)."""


class QuadratureError(SwarmForageError):
    """Adaptive quadrature failed to reach its tolerance."""


class SignConfigurationError(SwarmForageError):
    """The chosen sign in the angular diffusion integral gives a non-positive value."""


class InstabilityError(SwarmForageError):
    """ODE integration left the admissible state region."""

    def __init__(self, message, component=None, time=None):
        super().__init__(message)
        self.component = component
        self.time = time


class ConfigError(SwarmForageError):
    """Invalid configuration value."""


class UnidentifiableFitError(SwarmForageError):
    """The calibration data cannot pin down the fitted parameters."""


class PlanValidationError(SwarmForageError):
    """An experiment plan is malformed."""


class ClampedRateWarning(RuntimeWarning):
    """A derived rate came out negative and was clamped to zero."""


class InsufficientHorizonWarning(RuntimeWarning):
    """A calibration run was too short to observe the quantity of interest."""


class UnderdeterminedFitWarning(RuntimeWarning):
    """More free parameters than independent observations."""
