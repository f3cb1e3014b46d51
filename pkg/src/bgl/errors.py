"""Exception types raised across the package."""


__all__ = [
    "BGLError",
    "GraphError",
    "OutOfRangeParent",
    "EmptyType",
    "SizeMismatch",
    "MultipleParents",
    "TypeIndexOutOfRange",
    "ParseError",
    "ShapeMismatch",
    "NonFiniteScore",
    "LabelOutOfRange",
    "InstanceTooLarge",
    "NonFiniteLoss",
    "DivergedLoss",
    "InvalidSpec",
]


class BGLError(ValueError):
    """Base class for all errors raised by :mod:`bgl`."""


class GraphError(BGLError):
    pass


class OutOfRangeParent(GraphError):
    pass


class EmptyType(GraphError):
    pass


class SizeMismatch(GraphError):
    pass


class MultipleParents(GraphError):
    pass


class TypeIndexOutOfRange(GraphError, IndexError):
    pass


class ParseError(BGLError):
    """Malformed text input; ``lineno`` is 1-based (0 when unknown)."""

    def __init__(self, message, lineno=0):
        self.lineno = lineno
        if lineno:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ShapeMismatch(BGLError):
    pass


class NonFiniteScore(BGLError):
    pass


class LabelOutOfRange(BGLError):
    pass


class InstanceTooLarge(BGLError):
    pass


class NonFiniteLoss(BGLError, ArithmeticError):
    pass


class DivergedLoss(BGLError, ArithmeticError):
    """Training produced a non-finite loss; ``report`` holds the epochs so far."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class InvalidSpec(BGLError):
    pass
