"""Exception hierarchy. Every error raised by the package derives from DynaPrimError."""


class DynaPrimError(Exception):
    pass


class GeometryError(DynaPrimError, ValueError):
    pass


class DegenerateRotation(GeometryError):
    pass


class NotARotation(GeometryError):
    pass


class SamplingFailure(GeometryError):
    pass


class EmptyMesh(GeometryError):
    pass


class DegenerateNeighborhood(GeometryError):
    pass


class TooFewElements(GeometryError):
    pass


class EmptySet(DynaPrimError, ValueError):
    pass


class TooFewTimestamps(DynaPrimError, ValueError):
    pass


class NumericFailure(DynaPrimError, ArithmeticError):
    pass


class NonFiniteLoss(NumericFailure):
    pass


class NonFiniteGradient(NumericFailure):
    pass


class BadBounds(DynaPrimError, ValueError):
    pass


class ShapeMismatch(DynaPrimError, ValueError):
    pass


class EmptyFrame(DynaPrimError, ValueError):
    pass


class NoPrimitives(DynaPrimError, ValueError):
    pass


class InvalidSpec(DynaPrimError, ValueError):
    pass


class UnknownScene(DynaPrimError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ConfigError(DynaPrimError, ValueError):
    pass


class BadManifest(DynaPrimError, ValueError):
    pass


class MissingGT(DynaPrimError, FileNotFoundError):
    pass
