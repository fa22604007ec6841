"""Exception types shared across the package."""

from __future__ import annotations


class AparlError(Exception):
    """Base class for every error raised by this package."""


class InvalidHorizon(AparlError, ValueError):
    pass


class SupportTooLarge(AparlError, ValueError):
    def __init__(self, size: int, limit: int):
        super().__init__(f"trajectory support has at least {size} entries (limit {limit})")
        self.size = size
        self.limit = limit


class IndexOutOfRange(AparlError, IndexError):
    pass


class DegenerateBatch(AparlError, ValueError):
    pass


class NonFiniteParameter(AparlError, FloatingPointError):
    def __init__(self, message: str, partial=None):
        super().__init__(message)
        # partial trace (or parameter vector) at the point of failure
        self.partial = partial


class NotConverged(AparlError, RuntimeError):
    def __init__(self, grad_norm: float, iters: int, where: str = ""):
        msg = f"lower-level solve stopped after {iters} iterations with gradient norm {grad_norm:.3e}"
        if where:
            msg += f" ({where})"
        super().__init__(msg)
        self.grad_norm = grad_norm
        self.iters = iters


class SingularHessian(AparlError, ArithmeticError):
    pass


class EmptyTrace(AparlError, ValueError):
    pass


class NonFiniteEvaluation(AparlError, FloatingPointError):
    pass


class SchemaMismatch(AparlError, ValueError):
    def __init__(self, column: str, path: str = ""):
        where = f" in {path}" if path else ""
        super().__init__(f"unexpected or missing column {column!r}{where}")
        self.column = column


class ConfigError(AparlError, ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None, key: str | None = None):
        loc = ""
        if line is not None:
            loc = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(loc + message)
        self.line = line
        self.column = column
        self.key = key
