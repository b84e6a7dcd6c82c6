"""Exception hierarchy shared by every lab module.

Each error carries ``where`` ("module.operation") so the command runner can
name the failing step, and maps onto one process exit code.
"""

from typing import Optional


class LabError(Exception):
    exit_code = 1

    def __init__(self, message: str, where: Optional[str] = None):
        super().__init__(message)
        self.where = where

    def __str__(self) -> str:
        base = super().__str__()
        return f"{self.where}: {base}" if self.where else base


class InputError(LabError, ValueError):
    """Invalid domain input (geometry, field, operator or point arguments)."""

    exit_code = 2


class FluxQuantizationError(InputError):
    pass


class UnderResolvedGridError(InputError):
    def __init__(self, message: str, required: tuple, where: Optional[str] = None):
        super().__init__(message, where)
        self.required = tuple(required)


class ConfigError(LabError, ValueError):
    exit_code = 2


class NumericalError(LabError, RuntimeError):
    exit_code = 3


class SizeCapError(NumericalError):
    pass


class AcceptanceError(LabError):
    exit_code = 4
