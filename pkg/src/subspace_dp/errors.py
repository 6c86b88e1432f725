"""Exception hierarchy.

Every error raised by the library derives from :class:`SubspaceDPError`, which
itself is a :class:`ValueError` so callers that only care about bad input can
catch the builtin.
"""


class SubspaceDPError(ValueError):
    """Base class for all library errors."""


class DimensionMismatch(SubspaceDPError):
    pass


class NonFiniteInput(SubspaceDPError):
    pass


class FullRankConstraint(SubspaceDPError):
    """The constraint pins every coordinate; no subspace is left for noise."""


class TrivialConstraint(SubspaceDPError):
    """The constraint matrix has numerical rank zero."""


class SingularGram(SubspaceDPError):
    pass


class AxisOverlap(SubspaceDPError):
    pass


class DeltaZero(SubspaceDPError):
    """Gaussian calibration requested with delta == 0."""


class MixedDelta(SubspaceDPError):
    pass


class InvariantViolation(SubspaceDPError):
    pass


class RankDeficient(SubspaceDPError):
    pass


# The ellipsoid solver reports the same condition under its own name.
RankDeficientPoints = RankDeficient


class ProjectedRankDeficient(RankDeficient):
    """The null-space projection of the query lost rank."""


class MaxItersExceeded(SubspaceDPError):
    def __init__(self, message, factor=None):
        super().__init__(message)
        self.factor = factor


class PartitionInvalid(SubspaceDPError):
    pass


class NonAdditiveMechanism(SubspaceDPError):
    pass


class MissingAgent(SubspaceDPError):
    pass


class DegenerateRegressor(SubspaceDPError):
    pass


class InsufficientMass(SubspaceDPError):
    pass
