"""Exception hierarchy.

Metric-axiom failures derive from :class:`MetricError` so that front-ends
can map them to a single exit status.
"""


class MetricError(ValueError):
    pass


class TriangleViolation(MetricError):
    def __init__(self, triple, lhs, rhs):
        self.triple = tuple(triple)
        self.lhs = lhs
        self.rhs = rhs
        x, y, z = self.triple
        super().__init__(
            f"triangle inequality violated for ({x!r}, {y!r}, {z!r}): "
            f"d({x!r},{z!r}) = {lhs} > d({x!r},{y!r}) + d({y!r},{z!r}) = {rhs}")


class AsymmetricDistance(MetricError):
    def __init__(self, pair):
        self.pair = tuple(pair)
        super().__init__(f"distance is not symmetric on {self.pair!r}")


class ZeroDistanceDistinctPoints(MetricError):
    def __init__(self, pair):
        self.pair = tuple(pair)
        super().__init__(f"distinct points {self.pair!r} at distance 0")


class NonpositiveWeight(MetricError):
    def __init__(self, point, value):
        self.point = point
        super().__init__(f"weight of {point!r} is {value}, must be > 0")


class NotLipschitzOnSubset(ValueError):
    pass


class BaseMismatch(ValueError):
    pass


class NotASuperset(ValueError):
    pass


class NotNested(ValueError):
    pass


class AbsoluteContinuityViolation(ValueError):
    def __init__(self, points):
        self.points = list(points)
        super().__init__(
            f"points mapped outside the module base: {self.points!r}")


class BoundViolated(ValueError):
    def __init__(self, points, message="pointwise bound violated"):
        self.points = list(points)
        super().__init__(f"{message} at {self.points!r}")


class GeneratorsDoNotSpan(ValueError):
    def __init__(self, points):
        self.points = list(points)
        super().__init__(
            f"lifted generators do not span the fiber at {self.points!r}")


class InconsistentImages(ValueError):
    def __init__(self, points):
        self.points = list(points)
        super().__init__(
            f"generator images are not induced by a linear map at {self.points!r}")


class NotDirected(ValueError):
    pass


class CompositionLawViolated(ValueError):
    pass


class ConjugacyViolated(ValueError):
    pass


class IncompatibleFamily(ValueError):
    pass


class TargetNotScalar(ValueError):
    pass


class DominationFailure(ValueError):
    pass


class NotACover(ValueError):
    pass


class OutOfDomain(ValueError):
    pass
