"""Exception hierarchy shared by all solver layers."""


class AasqpError(Exception):
    """Base class for every error raised by this package."""


class NotPositiveDefinite(AasqpError):
    pass


class NotSymmetric(AasqpError):
    pass


class NoConvergence(AasqpError):
    pass


class DimensionMismatch(AasqpError):
    pass


class RankDeficientConstraints(AasqpError):
    pass


class Infeasible(AasqpError):
    pass


class Degenerate(AasqpError):
    pass


class MissingStructure(AasqpError):
    pass


class LinearizationFailure(AasqpError):
    pass


class DegenerateSecant(AasqpError):
    pass


class ActiveSetUnstable(AasqpError):
    pass


class InsufficientTail(AasqpError):
    pass


class ConfigurationError(AasqpError):
    pass


class MaxIterReached(AasqpError):
    """Raised by the SQP driver when the iteration cap is hit.

    The partial iterate and the convergence report travel with the error so
    callers can still log and plot the run.
    """

    def __init__(self, message, z=None, report=None):
        super().__init__(message)
        self.z = z
        self.report = report
