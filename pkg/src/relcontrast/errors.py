"""Exception hierarchy.

Data problems (bad files, integrity violations) derive from ``DataError`` so
callers such as the CLI can tell them apart from usage and runtime failures.
"""


class RelContrastError(Exception):
    pass


class DataError(RelContrastError):
    pass


class ParseError(DataError, ValueError):
    pass


class SchemaError(DataError, ValueError):
    pass


class IntegrityError(DataError):
    pass


class IoError(DataError, OSError):
    pass


class UnknownColumn(DataError, KeyError):
    pass


class KeyColumnNotAllowed(DataError, ValueError):
    pass


class InvalidNode(RelContrastError, IndexError):
    pass


class TypeMismatch(RelContrastError, ValueError):
    pass


class EmptyGraph(RelContrastError, ValueError):
    pass


class UnknownSeedType(RelContrastError, KeyError):
    pass


class InvalidSeed(RelContrastError, ValueError):
    pass


class ShapeMismatch(RelContrastError, ValueError):
    pass


class NotScalar(RelContrastError, ValueError):
    pass


class DetachedOutput(RelContrastError, ValueError):
    pass


class UnfittedEncoder(RelContrastError, RuntimeError):
    pass


class EmptyMarginal(DataError, ValueError):
    pass


class NegativeIsLinked(RelContrastError, ValueError):
    pass


class UndefinedContext(RelContrastError, ValueError):
    pass


class EmptySubgraph(RelContrastError, ValueError):
    pass


class RegimeMismatch(RelContrastError, ValueError):
    pass


class SingleClass(RelContrastError, ValueError):
    pass


class LengthMismatch(RelContrastError, ValueError):
    pass


class EmptyInput(RelContrastError, ValueError):
    pass


class CorruptPayload(DataError):
    pass


class VersionMismatch(DataError):
    pass


class TimeLimitExceeded(RelContrastError):
    pass
