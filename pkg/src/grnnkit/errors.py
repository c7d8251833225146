"""Exception types shared across the toolkit."""


class GrnnkitError(Exception):
    pass


class DimensionMismatch(GrnnkitError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class IsolatedNode(GrnnkitError, ValueError):
    pass


class InvalidProbability(GrnnkitError, ValueError):
    pass


class DegenerateSamples(GrnnkitError, ValueError):
    pass


class AsymmetricError(GrnnkitError, ValueError):
    pass


class NotSymmetric(GrnnkitError, ValueError):
    pass


class ConvergenceFailure(GrnnkitError, RuntimeError):
    pass


class GateOutOfRange(GrnnkitError, ValueError):
    pass


class InvalidSpec(GrnnkitError, ValueError):
    pass


class NonScalarLoss(GrnnkitError, ValueError):
    pass


class EmptyBatch(GrnnkitError, ValueError):
    pass


class ZeroTarget(GrnnkitError, ValueError):
    pass


class InvalidAlpha(GrnnkitError, ValueError):
    pass


class SequenceTooShort(GrnnkitError, ValueError):
    pass


class Divergence(GrnnkitError, RuntimeError):
    pass


class AssumptionViolated(GrnnkitError, ValueError):
    pass


class DegenerateProbes(GrnnkitError, ValueError):
    pass


class ConfigError(GrnnkitError, ValueError):
    pass


class IncompatibleRuns(GrnnkitError, ValueError):
    pass
