"""Exception hierarchy shared by all ocschur modules."""


class OcschurError(Exception):
    """Base class for all package errors."""


class InvalidMeshError(OcschurError, ValueError):
    pass


class DomainError(OcschurError, ValueError):
    pass


class ContractError(OcschurError, ValueError):
    """A documented precondition of an operation was violated."""


class AssemblyError(OcschurError, RuntimeError):
    pass


class SingularMatrixError(OcschurError, ArithmeticError):
    pass


class BreakdownError(OcschurError, ArithmeticError):
    """NaN or Inf appeared inside a Krylov recurrence."""


class CoarseProblemError(SingularMatrixError):
    pass
