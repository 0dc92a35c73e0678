"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates a documented precondition."""


class ContractViolation(RuntimeError):
    """An internal usage contract was broken (stale cache, stepping past T, ...)."""


class NumericError(ArithmeticError):
    """A numerically unrecoverable state (e.g. singular covariance)."""


class FormatError(ValueError):
    """A binary file failed validation. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
