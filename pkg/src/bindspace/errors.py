"""Error hierarchy. Each class carries the exit code the CLI maps it to."""

from __future__ import annotations

from typing import Optional


class BindError(Exception):
    exit_code = 1


class ConfigError(BindError):
    """Invalid configuration or a request the current inputs cannot satisfy."""

    exit_code = 2


class DimensionError(ConfigError):
    pass


class ContractError(ConfigError):
    """A pre-condition of an operation was violated by its caller."""


class FormatError(BindError):
    """A persisted file is missing, truncated, corrupt or of the wrong kind."""

    exit_code = 3

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(BindError):
    exit_code = 4


class DegenerateInputError(NumericError):
    def __init__(self, message: str, row: int) -> None:
        super().__init__(f"{message} (row {row})")
        self.detail = message
        self.row = row
