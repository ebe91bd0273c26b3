"""Exception hierarchy shared by every module."""


class EpsenseError(Exception):
    """Base class; the CLI maps subclasses onto exit codes."""


class ParameterError(EpsenseError, ValueError):
    pass


class HierarchyViolation(ParameterError):
    def __init__(self, inequality: str, detail: str = ""):
        self.inequality = inequality
        super().__init__(f"hierarchy violated: {inequality}" + (f" ({detail})" if detail else ""))


class NonPositiveRate(ParameterError):
    def __init__(self, field: str, value: float):
        self.field = field
        self.value = value
        super().__init__(f"{field} must be strictly positive, got {value!r}")


class MissingField(ParameterError):
    def __init__(self, field: str):
        self.field = field
        super().__init__(f"missing required field {field!r}")


class NumericalError(EpsenseError, ArithmeticError):
    pass


class Divergence(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class NoLimitCycle(NumericalError):
    pass


class FrequencyUnlocked(NumericalError):
    pass


class TruncationNotConverged(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class CardinalityMismatch(NumericalError):
    pass


class NoBracket(NumericalError):
    pass


class AmbiguousRoot(NumericalError):
    """Several sign changes inside the bracket; ``roots`` holds all of them."""

    def __init__(self, roots):
        self.roots = list(roots)
        super().__init__(f"{len(self.roots)} roots in bracket: {self.roots}")


class NoMinimumInBracket(NumericalError):
    pass


class UncertifiedPoint(NumericalError):
    """A splitting sweep was requested at a point that is not a certified EP."""


class InsufficientPoints(NumericalError, ValueError):
    pass


class NonPositiveValue(NumericalError, ValueError):
    pass


class ConfigError(EpsenseError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class IoError(EpsenseError, OSError):
    pass


class PartialFailure(EpsenseError):
    def __init__(self, failures):
        self.failures = failures
        super().__init__(f"{len(failures)} sweep point(s) failed")
