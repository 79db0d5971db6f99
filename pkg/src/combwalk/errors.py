"""Exception types shared by the package."""


class CombError(Exception):
    """Base class for all package errors."""


class InvalidArgument(CombError, ValueError):
    pass


class DegeneracyError(CombError):
    """A quantity that needs a simple eigenvalue was asked for a degenerate one."""

    def __init__(self, message, cluster):
        super().__init__(message)
        self.cluster = tuple(int(i) for i in cluster)


class InternalConsistencyError(CombError):
    """Two independent routes disagree (e.g. solved vs predicted bound-state count)."""

    def __init__(self, message, **values):
        super().__init__(message)
        self.values = values


class SpecialThetaError(CombError, ValueError):
    """theta is 0 or pi, where the S-matrix is the formal constant -1."""


class SingularThetaError(CombError):
    """X(theta) stays ill-conditioned even after perturbing theta."""


class PoleError(CombError, ValueError):
    """Evaluation at a pole (e.g. tan(delta/2) at delta = +-pi)."""
