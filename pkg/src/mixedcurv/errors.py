"""Exception hierarchy shared by every module."""


class MixedCurvError(Exception):
    """Base class for all library errors."""


class ExprError(MixedCurvError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, offset: int, expected: str, source: str = ""):
        self.offset = offset
        self.expected = expected
        self.source = source
        super().__init__(f"syntax error at offset {offset}: expected {expected}")


class UnknownSymbol(ExprError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown symbol {name!r}")


class UnboundParameter(ExprError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound parameter {name!r}")


class DomainError(ExprError, ArithmeticError):
    pass


class GeometryError(MixedCurvError):
    pass


class DegenerateMetric(GeometryError):
    pass


class DegenerateDistribution(GeometryError):
    pass


class GramSchmidtBreakdown(GeometryError):
    pass


class DegeneratePlane(GeometryError):
    pass


class SignatureMismatch(GeometryError):
    pass


class NotCodimOne(GeometryError):
    pass


class NotBiregular(GeometryError):
    pass


class HypothesisViolated(GeometryError):
    def __init__(self, which: str):
        self.which = which
        super().__init__(f"structural hypothesis violated: {which}")


class QuadratureNotConverged(MixedCurvError):
    pass


class OdeDiverged(MixedCurvError):
    pass


class InconsistentCurvatures(MixedCurvError):
    pass


class InitialValueOutOfRange(MixedCurvError):
    pass


class SubstitutionDomainError(MixedCurvError):
    pass


class ConfigError(MixedCurvError):
    """Bad configuration; `pointer` is a JSON pointer to the offending key."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")
