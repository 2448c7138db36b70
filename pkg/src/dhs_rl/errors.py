"""Exception hierarchy shared by every module."""


class DhsError(Exception):
    """Base class for all errors raised by :mod:`dhs_rl`."""


class DimensionMismatch(DhsError, ValueError):
    pass


class NotContractive(DhsError, ArithmeticError):
    """Raised when a matrix expected to be Schur stable has spectral radius >= 1."""

    def __init__(self, message, radius=None):
        super().__init__(message)
        self.radius = radius


class NotStabilizable(DhsError, ArithmeticError):
    pass


class NoConvergence(DhsError, ArithmeticError):
    pass


class SequenceTooShort(DhsError, ValueError):
    pass


class InvalidTopology(DhsError, ValueError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SingularDiscretization(DhsError, ValueError):
    pass


class Infeasible(DhsError, ArithmeticError):
    pass


class AssumptionViolated(DhsError, ValueError):
    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank


class HistoryTooShort(DhsError, ValueError):
    pass


class RankDeficient(DhsError, ArithmeticError):
    def __init__(self, message, rank=None, required=None):
        super().__init__(message)
        self.rank = rank
        self.required = required


class IllConditioned(DhsError, ArithmeticError):
    pass


class SingularBlock(DhsError, ArithmeticError):
    pass


class DestabilizingUpdate(DhsError, ArithmeticError):
    pass


class IterationCapExceeded(DhsError, RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class Diverged(DhsError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ZeroReference(DhsError, ZeroDivisionError):
    pass


class ParseError(DhsError, ValueError):
    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class ValidationFailed(DhsError, ValueError):
    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)
