"""Exception types shared across the package."""


class BlochscatError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(BlochscatError):
    """Invalid run configuration (bad field, missing section, bad value)."""


class BranchCutError(BlochscatError):
    """Square root requested on the cut [0, oo) without the boundary flag."""


class ThresholdProximityError(BlochscatError):
    """Boundary-value operator requested too close to a channel threshold."""


class NearSingularError(BlochscatError):
    """A matrix inversion hit the condition-number cap.

    Carries the smallest singular value, which distinguishes a nearby
    eigenvalue or threshold from a plain ill-conditioned system.
    """

    def __init__(self, message, smallest_singular_value=None, condition_number=None):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value
        self.condition_number = condition_number


class RankDetectionError(BlochscatError):
    """A singular value fell inside the gray zone of the rank tolerance."""


class SeriesDivergenceError(BlochscatError):
    """Neumann series terms stopped decreasing; |kappa| is too large."""


class CascadeDomainError(BlochscatError):
    """Expansion requested outside the domain the cascade can evaluate."""


class GridResolutionError(BlochscatError):
    """Half-line grid data is unresolved (endpoint mass, aliasing, escape)."""
