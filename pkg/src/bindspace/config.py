"""Runtime configuration, overridable via environment variables."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Union

from pydantic import ValidationError

from bindspace.errors import ConfigError, FormatError
from bindspace.models import RunConfig

# Log level for the bindspace logger.
# Override with BINDSPACE_LOG_LEVEL=DEBUG
LOG_LEVEL = os.environ.get("BINDSPACE_LOG_LEVEL", "INFO").upper()

# "text" for human-readable lines, "json" for one JSON object per record.
LOG_FORMAT = os.environ.get("BINDSPACE_LOG_FORMAT", "text").lower()


def describe_validation_error(exc: ValidationError) -> str:
    """Flatten a pydantic error into 'field.path: message' lines."""
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_run_config(text: Union[str, bytes]) -> RunConfig:
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(f"invalid run config: {describe_validation_error(exc)}") from exc


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read and fully validate a JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FormatError(f"config file not found: {path}") from exc
    try:
        json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from exc
    return parse_run_config(text)
