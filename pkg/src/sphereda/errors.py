"""Exception hierarchy shared by every module of the package."""


class SpheredaError(Exception):
    """Base class for all package errors."""


class ZeroVector(SpheredaError):
    pass


class EmptyInput(SpheredaError):
    pass


class TooFewClasses(SpheredaError):
    pass


class MissingPrototype(SpheredaError):
    pass


class EmptyPrototypes(SpheredaError):
    pass


class EmptyPositives(SpheredaError):
    pass


class ShapeMismatch(SpheredaError):
    pass


class OutOfRange(SpheredaError):
    pass


class InvalidConfig(SpheredaError):
    pass


class EmptyStylePool(SpheredaError):
    pass


class EmptyClass(SpheredaError):
    pass


class ParseError(SpheredaError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(SpheredaError):
    pass


class VersionMismatch(SpheredaError):
    pass


class DegenerateEmbedding(SpheredaError):
    pass


class TrainingDiverged(SpheredaError):
    """Raised when the loss stops being finite. ``snapshot`` holds diagnostics."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class SingleClass(SpheredaError):
    pass
