"""Exception hierarchy shared by every module."""


class DPLocError(Exception):
    """Base class for package errors."""


class ConfigError(DPLocError, ValueError):
    pass


class SchemaError(DPLocError, ValueError):
    pass


class NumericError(DPLocError, ArithmeticError):
    pass


class StateError(DPLocError, RuntimeError):
    pass


class ContractViolation(DPLocError, ValueError):
    """An input broke a documented precondition (e.g. unclipped gradient)."""


class CalibrationError(DPLocError, RuntimeError):
    pass


class BudgetExhausted(DPLocError, RuntimeError):
    pass


class DataError(DPLocError, ValueError):
    """Malformed or invalid fingerprint data."""

    def __init__(self, message: str, rows: list[tuple[int, str]] | None = None):
        self.rows = rows or []
        if self.rows:
            detail = "; ".join(f"row {r}: {why}" for r, why in self.rows[:10])
            message = f"{message} ({detail})"
        super().__init__(message)
