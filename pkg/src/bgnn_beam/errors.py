"""Exception hierarchy shared by every module of the package."""


class BgnnError(Exception):
    """Base class for all package errors."""


class ShapeError(BgnnError, ValueError):
    """Operand dimensions do not conform."""


class ContractError(BgnnError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(BgnnError, FloatingPointError):
    """A NaN or Inf appeared in a computed value."""


class ConvergenceError(BgnnError, RuntimeError):
    """An iterative routine hit its iteration cap."""


class SingularMatrixError(BgnnError, ArithmeticError):
    """A matrix expected to be positive definite is not."""


class InvalidInstanceError(BgnnError, ValueError):
    """A channel instance is degenerate (e.g. a zero-norm user channel)."""


class InfeasibleError(BgnnError, ValueError):
    """The requested scheme cannot be applied to this instance."""


class ConfigError(BgnnError, ValueError):
    """Bad configuration key or value."""
