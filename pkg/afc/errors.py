"""
Exception types for the AFC pipeline.

Every error raised on purpose by the pipeline derives from AfcError so the CLI
can map it to an exit code:
- UsageError    -> 2 (bad arguments, bad config, missing input files)
- DataError     -> 3 (malformed or inconsistent SCADA / alarm data)
- TrainingError -> 1 (non-finite loss and other training failures)

UsageError and DataError are also ValueErrors, so plain `except ValueError`
handlers keep working.
"""

from typing import Optional


class AfcError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class UsageError(AfcError, ValueError):
    """Invalid arguments, configuration or call contract."""

    exit_code = 2


class SpecError(UsageError):
    """Infeasible synthetic dataset specification."""


class DataError(AfcError, ValueError):
    """Input data is malformed or inconsistent."""

    exit_code = 3


class ParseError(DataError):
    """
    A file could not be parsed.

    Args:
        message (str): Human readable description
        path (str): File being parsed
        row (int): 1-based data row number (header excluded), if known
        column (str): Column name, if known
    """

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        row: Optional[int] = None,
        column: Optional[str] = None
    ):
        self.path = path
        self.row = row
        self.column = column

        location = []
        if path:
            location.append(str(path))
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")

        if location:
            message = f"{', '.join(location)}: {message}"
        super().__init__(message)


class TrainingError(AfcError):
    """Training diverged or could not proceed."""

    exit_code = 1

    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        self.epoch = epoch
        self.batch = batch
        if epoch is not None:
            message = f"{message} (epoch {epoch}, batch {batch})"
        super().__init__(message)
