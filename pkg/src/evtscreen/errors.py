"""Exception hierarchy shared by all estimation stages."""

from __future__ import annotations


class EvtScreenError(Exception):
    """Base class for every error raised by this package."""


class DomainError(EvtScreenError, ValueError):
    """An argument lies outside the domain of the operation."""


class DataError(EvtScreenError):
    """Input data could not be read or violates a data invariant."""


class ConfigError(EvtScreenError):
    """A run configuration or simulation spec is malformed."""


class EstimationError(EvtScreenError):
    """An estimator could not produce a finite, valid value."""


class EmptyNeighborhood(EstimationError):
    """No observation receives positive kernel weight at the query point."""


class DegeneratePickands(EstimationError):
    """A quantile spacing in the Pickands ratio is not strictly positive."""


class DegenerateScale(EstimationError):
    """The quantile spacing used for the auxiliary scale is not positive."""


class UnstableUtility(EstimationError):
    """Too many evaluation points of a marginal utility were degenerate."""


class SingularDesign(EstimationError):
    """The regression design is rank deficient or too wide for the tail sample."""


class ZeroDirection(EstimationError):
    """The tail regression slope vector is identically zero."""


class InsufficientTail(EstimationError):
    """Fewer weighted exceedances than the likelihood fit requires."""


class FitFailed(EstimationError):
    """Every optimizer restart ended at an infeasible point."""


class NoFeasibleBandwidth(EstimationError):
    pass


class NoExceedances(EstimationError):
    pass


class NoFeasibleK(EstimationError):
    pass


class SelectionFailed(EstimationError):
    pass
