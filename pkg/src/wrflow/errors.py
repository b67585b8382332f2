"""Exception and warning types raised by wrflow."""


class WRFlowError(Exception):
    """Base class for all wrflow errors."""


class NotHermitianError(WRFlowError, ValueError):
    pass


class NotPsdError(WRFlowError, ValueError):
    pass


class NotProjectionError(WRFlowError, ValueError):
    pass


class DimensionMismatchError(WRFlowError, ValueError):
    pass


class EmptyBasisError(WRFlowError, ValueError):
    pass


class EmptyWordError(WRFlowError, ValueError):
    pass


class InvalidWordError(WRFlowError, ValueError):
    pass


class BudgetExceededError(WRFlowError, RuntimeError):
    """Raised when an exhaustive computation would exceed the node budget."""


class InvalidMeasureError(WRFlowError, ValueError):
    pass


class ResidualKindNotBinaryError(InvalidMeasureError):
    """The residual measure only exists for m = 2 under the splitting condition."""


class EmptySampleSetError(WRFlowError, ValueError):
    pass


class OperatorsNotRetainedError(WRFlowError, ValueError):
    pass


class BranchNotExtinctError(WRFlowError, ValueError):
    pass


class InvalidConfigError(WRFlowError, ValueError):
    pass


class ZeroOperatorWarning(UserWarning):
    """The operator is zero; its support is the trivial subspace."""


class BlindDirectionWarning(UserWarning):
    """The projections miss part of the energy support (leakage constant is zero)."""
