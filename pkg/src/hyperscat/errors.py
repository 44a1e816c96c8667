"""Exception hierarchy shared by all hyperscat modules."""


class HyperscatError(Exception):
    """Base class for all package errors."""


class InvalidArgument(HyperscatError, ValueError):
    """Malformed or non-finite input."""


class NumericFailure(HyperscatError):
    """A numerical routine failed to converge or produced garbage."""


class ConservationFailure(NumericFailure):
    """Energy drift along a trajectory exceeded tolerance at minimal step size."""


class NotInRegion(HyperscatError):
    """A phase-space point does not belong to the required region."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = [] if indices is None else list(indices)


class ReachFailure(HyperscatError):
    """Sample did not reach the target region within the horizon."""

    def __init__(self, message, worst_point=None):
        super().__init__(message)
        self.worst_point = worst_point


class InversionFailure(NumericFailure):
    """Newton iteration for the momentum map diverged (point outside range)."""


class ConstructionFailure(NumericFailure):
    """Tail of a phase/amplitude construction did not converge."""

    def __init__(self, message, worst_point=None):
        super().__init__(message)
        self.worst_point = worst_point


class DomainFailure(HyperscatError):
    """Evaluation point / characteristic / stencil left the tabulated domain."""


class SupportFailure(HyperscatError):
    """Computed symbol leaks outside its required support region."""


class DifferentiationFailure(NumericFailure):
    """The two eps-derivative routes disagree beyond tolerance."""


class TruncationFailure(NumericFailure):
    """Mode-sum tail bound above tolerance."""


class FitFailure(NumericFailure):
    """Ill-conditioned or unstable least-squares fit."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class WindowFailure(HyperscatError):
    """Requested spectral window lies outside the reliable range."""


class ResolutionFailure(HyperscatError):
    """Symbol support incompatible with grid Nyquist range (aliasing)."""


class UnsupportedModel(HyperscatError):
    """Model family outside the scope of this operation."""
