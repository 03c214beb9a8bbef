"""Exception hierarchy shared by every module of the package."""


class EnsembleError(ValueError):
    """Base class for all data and contract errors raised by this package."""


# I/O and schema
class MalformedHeader(EnsembleError):
    pass


class UnsupportedDtype(EnsembleError):
    pass


class NonFiniteValue(EnsembleError):
    pass


class IoFailure(EnsembleError, OSError):
    pass


class SchemaViolation(EnsembleError):
    pass


class DuplicateBackboneName(SchemaViolation):
    pass


class DimMismatchOnLoad(SchemaViolation):
    pass


# shapes and arguments
class EmptyMatrix(EnsembleError):
    pass


class LengthMismatch(EnsembleError):
    pass


class ShapeMismatch(EnsembleError):
    pass


DimensionMismatch = ShapeMismatch


class EmptyList(EnsembleError):
    pass


class EmptySplit(EnsembleError):
    pass


class EmptyClassSet(EnsembleError):
    pass


class TooManyBackbones(EnsembleError):
    pass


class TooFewClasses(EnsembleError):
    pass


class UnknownBackboneName(EnsembleError):
    pass


class MissingFeatures(EnsembleError):
    pass


class MissingCombinerState(EnsembleError):
    pass


# numerics
class EmptyUnion(EnsembleError):
    pass


class ZeroBaseline(EnsembleError):
    pass


class DegenerateInput(EnsembleError):
    pass


class NonPositiveTemperature(EnsembleError):
    pass


class NotADistribution(EnsembleError):
    pass


class NonFiniteLoss(EnsembleError, ArithmeticError):
    pass


class InfeasibleRates(EnsembleError):
    pass
