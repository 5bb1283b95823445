"""Exception hierarchy for the time-scale spectral solver."""


class TSSpecError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TSSpecError, ValueError):
    """Malformed input data or job configuration."""


class ComputeError(TSSpecError, RuntimeError):
    """A numerical stage failed to deliver a trustworthy result."""


# time scale
class OverlapError(ConfigError):
    pass


class DegenerateError(ConfigError):
    pass


class NonFiniteError(ConfigError):
    pass


class NotInScaleError(ConfigError):
    pass


class EmptyCoreError(ConfigError):
    pass


# potential
class OutOfRangeError(ConfigError):
    pass


class ShapeMismatchError(ConfigError):
    pass


class MissingPointValueError(ConfigError):
    pass


# forward
class IntegrationError(ComputeError):
    pass


class RootCountError(ComputeError):
    pass


class ToleranceError(ComputeError):
    pass


class NonPositiveWeightError(ComputeError):
    pass


class ExtrapolationDivergenceError(ComputeError):
    pass


class CommensurabilityError(ComputeError):
    """Segment lengths are not rationally related; reported, not fatal."""


class AssignmentError(ComputeError):
    pass


# inverse
class GridError(ConfigError):
    pass


class DataLengthError(ConfigError):
    pass


class ModelMismatchError(ConfigError):
    pass


class SingularSystemError(ComputeError):
    pass


class AllNearZeroError(ComputeError):
    pass


class FitResidualError(ComputeError):
    pass


class BranchError(ComputeError):
    pass


class PoleExtractionError(ComputeError):
    pass


class CancellationError(ComputeError):
    pass


class IterationLimitError(ComputeError):
    pass


class CheckFailure(TSSpecError):
    """An invariant check requested by the user did not pass."""
