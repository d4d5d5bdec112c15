"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI uses for it, and every
instance records the module it came from so failures read as
``[localpoly] ...`` at the command line.
"""

from __future__ import annotations


class CompDidError(Exception):
    """Root of all errors raised by compdid."""

    exit_code = 1

    def __init__(self, message: str, module: str | None = None):
        super().__init__(message)
        self.message = message
        self.module = module

    def __str__(self) -> str:
        if self.module:
            return f"[{self.module}] {self.message}"
        return self.message


class ConfigError(CompDidError):
    exit_code = 2


class ParameterError(ConfigError, ValueError):
    """A tuning parameter is outside its admissible range."""


class ShapeError(CompDidError, ValueError):
    exit_code = 4


class IngestionError(CompDidError):
    exit_code = 3

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message, module="ingest")
        self.row = row
        self.column = column


class EstimationError(CompDidError):
    exit_code = 4


class EmptyCellError(EstimationError):
    def __init__(self, cell: tuple[int, int], module: str | None = "estimators"):
        super().__init__(f"empty treatment cell ({cell[0]},{cell[1]})", module=module)
        self.cell = cell


class DegenerateTestError(CompDidError):
    exit_code = 5
