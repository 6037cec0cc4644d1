"""Exception types shared across the package."""


class DistReachError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(DistReachError, ValueError):
    pass


class InvalidDimension(DistReachError, ValueError):
    pass


class MissingNetwork(DistReachError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyNeighborSet(DistReachError, ValueError):
    pass


class InvertedBounds(DistReachError, ValueError):
    pass


class UnknownAgent(DistReachError, ValueError):
    pass


class StructureMismatch(DistReachError, ValueError):
    pass


class NegativeMultiplier(DistReachError, ValueError):
    pass


class NegativeGamma(NegativeMultiplier):
    pass


class NotAffine(DistReachError, ValueError):
    pass


class NonFiniteEntries(DistReachError, ValueError):
    pass


class HorizonError(DistReachError, ValueError):
    """Known-input sequence does not cover the requested horizon."""


class ScenarioValidationError(DistReachError):
    """Raised with the complete list of violations found in a scenario."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{type(v).__name__}: {v}" for v in self.violations]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))


class SolverFailure(DistReachError):
    def __init__(self, message, status=None, context=None):
        self.status = status
        self.context = dict(context or {})
        if self.context:
            ctx = ", ".join(f"{k}={v}" for k, v in self.context.items())
            message = f"{message} ({ctx})"
        super().__init__(message)


class InfeasibleProblem(SolverFailure):
    pass


class ParseError(DistReachError, ValueError):
    pass


class ShapeError(DistReachError, ValueError):
    pass
